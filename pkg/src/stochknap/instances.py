"""Benchmark instances: generator for the nine item types and the weight laws.

Item values are expected (pre-transformed) profits E[phi_i]; weights are
described by their means and standard deviations plus a distribution family.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

TYPES = ("U", "WC", "SC", "ISC", "ASC", "SS", "USW", "PC", "C")
DISTRIBUTIONS = ("normal", "multivariate-normal", "gamma", "lognormal", "discrete")
PSD_TOL = 1e-8


@dataclass
class Instance:
    values: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    capacity: float
    shortage_cost: float = 10.0
    distribution: str = "normal"
    cov: np.ndarray | None = None
    support: np.ndarray | None = None  # discrete law: n x K weights
    probs: np.ndarray | None = None    # discrete law: n x K masses
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.cov is not None:
            self.cov = np.asarray(self.cov, dtype=float).reshape(self.n, self.n)
        if self.support is not None:
            self.support = np.atleast_2d(np.asarray(self.support, dtype=float))
            self.probs = np.atleast_2d(np.asarray(self.probs, dtype=float))
        self.validate()

    @property
    def n(self) -> int:
        return len(self.mu)

    @property
    def c(self) -> float:
        return self.shortage_cost

    @property
    def id(self) -> str:
        md = self.metadata
        if "id" in md:
            return md["id"]
        return "{}-n{}-cv{}-rho{}-h{}-s{}-i{}".format(
            md.get("type", "X"), self.n, md.get("cv", ""), md.get("rho") or 0, md.get("h", ""),
            md.get("seed", ""), md.get("index", 0))

    @property
    def correlated(self) -> bool:
        return self.cov is not None

    def validate(self):
        n = self.n
        if self.values.shape != (n,) or self.sigma.shape != (n,):
            raise ValueError("values, mu and sigma must have equal length")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if np.any(self.sigma < 0):
            raise ValueError("weight standard deviations must be nonnegative")
        if self.capacity <= 0 or self.shortage_cost <= 0:
            raise ValueError("capacity and shortage cost must be positive")
        if self.cov is not None:
            S = self.cov
            if not np.allclose(S, S.T, atol=1e-12, rtol=0):
                raise ValueError("covariance must be symmetric")
            if not np.allclose(np.diag(S), self.sigma ** 2, rtol=1e-9, atol=1e-12):
                raise ValueError("covariance diagonal must equal sigma^2")
            if n and np.linalg.eigvalsh(S).min() < -PSD_TOL * max(1.0, np.abs(S).max()):
                raise ValueError("covariance is not positive semidefinite")
        if self.distribution == "discrete":
            if self.support is None or self.support.shape != self.probs.shape or len(self.support) != n:
                raise ValueError("discrete law needs per-item support and probabilities")
            if not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-12):
                raise ValueError("discrete probabilities must sum to one")

    def covariance(self) -> np.ndarray:
        return self.cov if self.cov is not None else np.diag(self.sigma ** 2)

    def with_capacity(self, capacity: float) -> "Instance":
        return self.subset(np.arange(self.n), capacity)

    def subset(self, idx, capacity=None, mu=None, cov=None) -> "Instance":
        """Sub-instance on items ``idx`` (optionally with a conditional law)."""
        idx = np.asarray(idx, dtype=int)
        m = self.mu[idx] if mu is None else np.asarray(mu, dtype=float)
        if cov is None and self.cov is not None:
            cov = self.cov[np.ix_(idx, idx)]
        sig = np.sqrt(np.clip(np.diag(cov), 0, None)) if cov is not None else self.sigma[idx]
        if cov is not None:
            cov = 0.5 * (cov + cov.T)
            np.fill_diagonal(cov, sig ** 2)
        return Instance(self.values[idx], m, sig, self.capacity if capacity is None else capacity,
                        self.shortage_cost, self.distribution, cov,
                        None if self.support is None else self.support[idx],
                        None if self.probs is None else self.probs[idx], dict(self.metadata))

    # -- weight laws -------------------------------------------------------------------

    def weights_from_uniform(self, u) -> np.ndarray:
        """Map uniforms (runs x n) to weights through each marginal's inverse cdf.

        The multivariate normal case colours standard normals with the
        Cholesky factor of the covariance.
        """
        u = np.asarray(u, dtype=float)
        if self.distribution == "normal":
            return self.mu + self.sigma * special.ndtri(u)
        if self.distribution == "multivariate-normal":
            L = cholesky(self.covariance())
            return self.mu + special.ndtri(u) @ L.T
        if self.distribution == "gamma":
            out = np.empty_like(u)
            for i in range(self.n):
                p = moment_match("gamma", self.mu[i], self.sigma[i] / self.mu[i])
                out[:, i] = stats.gamma.ppf(u[:, i], p["shape"], scale=p["scale"])
            return out
        if self.distribution == "lognormal":
            out = np.empty_like(u)
            for i in range(self.n):
                p = moment_match("lognormal", self.mu[i], self.sigma[i] / self.mu[i])
                out[:, i] = np.exp(p["mu_log"] + p["sigma_log"] * special.ndtri(u[:, i]))
            return out
        out = np.empty_like(u)
        for i in range(self.n):
            cdf = np.cumsum(self.probs[i])
            k = np.minimum(np.searchsorted(cdf, u[:, i], side="right"), len(cdf) - 1)
            out[:, i] = self.support[i][k]
        return out

    def normal_counterpart(self) -> "Instance":
        """Independent normal law with the same means and standard deviations."""
        md = dict(self.metadata, source_distribution=self.distribution)
        return Instance(self.values, self.mu, self.sigma, self.capacity, self.shortage_cost,
                        "normal", metadata=md)

    # -- serialisation -----------------------------------------------------------------

    def to_dict(self) -> dict:
        d = {"n": self.n, "values": self.values.tolist(), "mu": self.mu.tolist(),
             "sigma": self.sigma.tolist(), "cov": None if self.cov is None else self.cov.ravel().tolist(),
             "capacity": float(self.capacity), "shortage_cost": float(self.shortage_cost),
             "distribution": self.distribution, "metadata": self.metadata}
        if self.support is not None:
            d["support"] = self.support.tolist()
            d["probs"] = self.probs.tolist()
        return d

    def to_json(self) -> str:
        return _dumps(self.to_dict()) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, d) -> "Instance":
        return cls(d["values"], d["mu"], d["sigma"], d["capacity"], d.get("shortage_cost", 10.0),
                   d.get("distribution", "normal"), d.get("cov"), d.get("support"), d.get("probs"),
                   d.get("metadata", {}))

    @classmethod
    def load(cls, path) -> "Instance":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _dumps(obj) -> str:
    # 17 significant digits so files round-trip bit-exactly
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dumps(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError("non-finite number in instance")
        return format(v, ".17g")
    return json.dumps(obj)


def cholesky(S, max_jitter=1e-10):
    """Lower factor of S, adding diagonal jitter up to ``max_jitter`` if needed."""
    S = np.asarray(S, dtype=float)
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(S + jitter * np.eye(len(S)))
        except np.linalg.LinAlgError:
            if jitter >= max_jitter:
                break
            jitter = 1e-14 if jitter == 0 else jitter * 10
    # semidefinite input: fall back to a symmetric square root
    w, V = np.linalg.eigh(S)
    if w.min() < -PSD_TOL * max(1.0, np.abs(S).max()):
        raise np.linalg.LinAlgError("matrix is not positive semidefinite")
    return V * np.sqrt(np.clip(w, 0, None))


# -- laws and transformations -----------------------------------------------------------


def moment_match(family: str, mean: float, c_v: float) -> dict:
    if mean <= 0 or c_v <= 0:
        raise ValueError("mean and coefficient of variation must be positive")
    if family == "gamma":
        return {"shape": 1.0 / c_v ** 2, "scale": mean * c_v ** 2}
    if family == "lognormal":
        s2 = math.log1p(c_v ** 2)
        return {"mu_log": math.log(mean) - s2 / 2.0, "sigma_log": math.sqrt(s2)}
    if family == "normal":
        return {"mean": mean, "sd": mean * c_v}
    raise ValueError(f"unknown family {family!r}")


def transform_profit(pi_mean, salvage, shortage, mu, capacity=0.0, cov_pi_omega=None):
    """Fold a salvage value into the item values.

    Returns ``(E[phi], c, constant)`` with ``E[phi_i] = E[(pi_i - s) omega_i]``,
    ``c = shortage - s`` and the dropped constant ``s * capacity``.
    """
    if salvage >= shortage:
        raise ValueError("salvage value must be below the shortage cost")
    pi_mean, mu = np.asarray(pi_mean, dtype=float), np.asarray(mu, dtype=float)
    ev = (pi_mean - salvage) * mu
    if cov_pi_omega is not None:
        ev = ev + np.asarray(cov_pi_omega, dtype=float)
    return ev, shortage - salvage, salvage * capacity


# -- generator --------------------------------------------------------------------------


@dataclass
class GeneratorConfig:
    type: str = "U"
    n: int = 25
    R: float = 100.0
    c_v: float = 0.1
    H: int = 10
    h: int = 1
    rho: float | None = None
    corr: str = "constant"  # 'constant' (static bed) or 'banded'
    d: float | None = None
    distribution: str = "normal"
    seed: int = 0
    index: int = 0
    shortage_cost: float = 10.0

    def validate(self):
        if self.type not in TYPES:
            raise ValueError(f"unknown instance type {self.type!r}")
        if not 1 <= self.h <= self.H:
            raise ValueError("h must lie in 1..H")
        if self.n < 1 or self.R <= 1 or self.c_v < 0:
            raise ValueError("invalid size, range or coefficient of variation")
        if self.rho is not None and not -1 < self.rho <= 1:
            raise ValueError("rho must lie in (-1, 1]")
        if self.corr not in ("constant", "banded"):
            raise ValueError("corr must be 'constant' or 'banded'")


def stream(seed: int, index: int, name: str) -> np.random.Generator:
    """Counter-based generator keyed by (seed, instance index, field name)."""
    ss = np.random.SeedSequence([int(seed) & (2 ** 64 - 1), int(index), zlib.crc32(name.encode())])
    return np.random.Generator(np.random.Philox(ss))


def draw_items(cfg: GeneratorConfig):
    """Expected weights and values for a configuration (independent of h)."""
    R, n = cfg.R, cfg.n
    uw = stream(cfg.seed, cfg.index, "weight").random(n)
    uv = stream(cfg.seed, cfg.index, "value").random(n)
    unif = lambda u, a, b: a + (b - a) * u
    t = cfg.type
    if t == "ISC":
        v = unif(uv, 1.0, R)
        return v + R / 10.0, v
    w = unif(uw, R, R + 10.0) if t == "USW" else unif(uw, 1.0, R)
    if t in ("U", "USW"):
        v = unif(uv, 1.0, R)
    elif t == "WC":
        lo = np.maximum(w - R / 10.0, 1.0)
        v = unif(uv, lo, lo + 2 * R / 10.0)
    elif t == "SC":
        v = w + R / 10.0
    elif t == "ASC":
        lo = np.maximum(w + R / 10.0 - R / 500.0, 1.0)
        v = unif(uv, lo, w + R / 10.0 + R / 500.0)
    elif t == "SS":
        v = w.copy()
    elif t == "PC":
        d = cfg.d if cfg.d is not None else 3.0
        v = d * np.ceil(w / d)
    else:
        d = cfg.d if cfg.d is not None else 2.0 / 3.0
        v = d * np.sqrt(4 * R ** 2 - (w - 2 * R) ** 2)
    return w, v


def correlation_matrix(n: int, rho: float, structure: str = "constant") -> np.ndarray:
    if structure == "banded":
        k = np.arange(n)
        return rho ** np.abs(k[:, None] - k[None, :])
    P = np.full((n, n), rho)
    np.fill_diagonal(P, 1.0)
    return P


def generate(cfg: GeneratorConfig) -> Instance:
    cfg.validate()
    w, v = draw_items(cfg)
    sigma = cfg.c_v * w
    cap = cfg.h / (cfg.H + 1) * w.sum()
    cov, dist = None, cfg.distribution
    if cfg.rho is not None:
        cov = correlation_matrix(cfg.n, cfg.rho, cfg.corr) * np.outer(sigma, sigma)
        np.fill_diagonal(cov, sigma ** 2)
        dist = "multivariate-normal"
    md = {"type": cfg.type, "R": cfg.R, "cv": cfg.c_v, "rho": cfg.rho, "corr": cfg.corr if cfg.rho is not None else None,
          "h": cfg.h, "H": cfg.H, "seed": cfg.seed, "index": cfg.index, "n": cfg.n}
    return Instance(v, w, sigma, cap, cfg.shortage_cost, dist, cov, metadata=md)


def generate_grid(types, ns, cvs, H=10, seed=0, R=100.0, rho=None, corr="constant",
                  distribution="normal"):
    """All capacity levels for every (type, n, c_v) combination."""
    out, index = [], 0
    for t in types:
        for n in ns:
            for cv in cvs:
                for h in range(1, H + 1):
                    out.append(generate(GeneratorConfig(t, n, R, cv, H, h, rho, corr, None,
                                                        distribution, seed, index)))
                index += 1
    return out


_REF_VALUES = [111, 111, 21, 117, 123, 34, 3, 121, 112, 12]
_REF_MU = [44, 42, 73, 15, 71, 12, 13, 14, 23, 15]


def reference_instance(c_v: float = 0.1) -> Instance:
    """Ten-item instance with capacity 100 and shortage cost 10, sigma = c_v * mu."""
    mu = np.array(_REF_MU, dtype=float)
    return Instance(np.array(_REF_VALUES, dtype=float), mu, c_v * mu, 100.0, 10.0,
                    metadata={"type": "REF", "cv": c_v, "id": f"ref-cv{c_v}"})
