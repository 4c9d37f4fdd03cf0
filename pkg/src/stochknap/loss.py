"""First-order loss function of the standard normal and its piecewise-linear bounds.

The Jensen lower bound of ``G(y) = E[max(Z - y, 0)]`` built from a partition
``(-inf, z_1], ..., [z_{W-1}, inf)`` of the real line is the piecewise-linear
function

    G_lb(y) = max(0, max_i (A_i - y * B_i)),   A_i = sum_{k>=i} p_k m_k,
                                               B_i = sum_{k>=i} p_k,

where ``p_k`` and ``m_k`` are region masses and conditional means. Adding the
largest linearisation error ``e_W`` gives the Edmundson-Madanski upper bound.
The minimax partition equalises the error at every breakpoint ``m_k``.
"""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import _normal as nrm

CACHE_VERSION = 1
CACHE_MAX_W = 128
_CACHE_FILE = Path(__file__).with_name("data") / "minimax_partitions.txt"

MAX_ITER = 10_000
SPREAD_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """Equal-error search failed; ``last`` holds the final iterate."""

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


class SegmentCapError(ValueError):
    def __init__(self, msg, reachable_epsilon):
        super().__init__(msg)
        self.reachable_epsilon = reachable_epsilon


@dataclass(frozen=True)
class LossLinearization:
    """Partition of the standard normal support and the derived bound data."""

    W: int
    probs: np.ndarray
    means: np.ndarray
    boundaries: np.ndarray
    max_error: float
    kind: str = "minimax"
    A: np.ndarray = field(init=False, repr=False)
    B: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        m = np.asarray(self.means, dtype=float)
        # tail sums from the right keep the small upper-tail masses accurate
        A = np.cumsum((p * m)[::-1])[::-1]
        B = np.cumsum(p[::-1])[::-1]
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "boundaries", np.asarray(self.boundaries, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def A_max(self) -> float:
        return float(self.A.max())

    def breakpoint_errors(self) -> np.ndarray:
        return standard_loss(self.means) - jensen_lb(self, self.means)


def standard_loss(y):
    """G(y) = phi(y) - y (1 - Phi(y)); accepts scalars or arrays."""
    if np.ndim(y) == 0:
        return nrm.loss(float(y))
    y = np.asarray(y, dtype=float)
    return nrm.pdf_array(y) - y * nrm.sf_array(y)


def scaled_loss(y, mu, sigma):
    """E[max(X - y, 0)] for X ~ N(mu, sigma^2)."""
    if np.ndim(sigma) == 0 and sigma <= 0:
        raise ValueError("sigma must be positive")
    return sigma * standard_loss((np.asarray(y, dtype=float) - mu) / sigma) if np.ndim(y) else \
        sigma * standard_loss((y - mu) / sigma)


def complementary_loss(y, mean, sigma=1.0):
    """E[max(y - X, 0)] for X ~ N(mean, sigma^2), via (y - mean) + E[max(X - y, 0)]."""
    return (y - mean) + scaled_loss(y, mean, sigma)


def jensen_lb(lin: LossLinearization, y):
    y_arr = np.asarray(y, dtype=float)
    vals = lin.A[:, None] - np.atleast_1d(y_arr)[None, :] * lin.B[:, None]
    out = np.maximum(vals.max(axis=0), 0.0)
    return float(out[0]) if y_arr.ndim == 0 else out.reshape(y_arr.shape)


def edmundson_madanski_ub(lin: LossLinearization, y):
    return jensen_lb(lin, y) + lin.max_error


def partial_mass_sums(lin: LossLinearization):
    """Return ``(A, B, A_max)`` with ``A_i = sum_{k>=i} p_k m_k`` and ``B_i = sum_{k>=i} p_k``."""
    return lin.A.copy(), lin.B.copy(), lin.A_max


# -- partition construction -----------------------------------------------------------


def _region_error(a: float, b: float) -> float:
    """Jensen-bound error at the conditional mean of region (a, b).

    Regions to the right contribute phi(b) - m sf(b) to the bound; the region
    itself and those to the left contribute nothing at y = m.
    """
    _, m = nrm.region_stats(a, b)
    return nrm.loss(m) - (nrm.pdf(b) - m * nrm.sf(b))


def _march(e: float, k: int):
    """Place k boundaries left to right so that each region's error equals e.

    Returns None when e is too large to be reached by a finite boundary.
    """
    z = [-math.inf]
    for _ in range(k):
        a = z[-1]
        lo = a + 1e-7 * max(1.0, abs(a)) if math.isfinite(a) else -30.0
        if _region_error(a, 30.0) < e:
            return None
        z.append(brentq(lambda b: _region_error(a, b) - e, lo, 30.0,
                        xtol=1e-15, rtol=1e-15, maxiter=MAX_ITER))
    return z


def _symmetric_boundaries(W: int):
    m = W // 2
    if W % 2 == 0:
        def residual(e):
            z = _march(e, m)
            return 30.0 if z is None else z[-1]
    else:
        def residual(e):
            z = _march(e, m)
            if z is None or z[-1] >= 0.0:
                return -1.0
            t = -z[-1]
            return _region_error(-t, t) - e

    try:
        e = brentq(residual, 1e-12, 0.999 * nrm.loss(0.0), xtol=1e-18, rtol=1e-15,
                   maxiter=MAX_ITER)
    except (ValueError, RuntimeError) as exc:
        raise ConvergenceError(f"minimax search failed for W={W}: {exc}") from exc
    left = _march(e, m)[1:]
    if W % 2 == 0:
        left[-1] = 0.0
        inner = left + [-v for v in reversed(left[:-1])]
    else:
        inner = left + [-v for v in reversed(left)]
    return np.array([-math.inf, *inner, math.inf])


def partition_from_boundaries(boundaries, kind="custom") -> LossLinearization:
    z = np.asarray(boundaries, dtype=float)
    stats = [nrm.region_stats(z[k], z[k + 1]) for k in range(len(z) - 1)]
    probs = np.array([s[0] for s in stats])
    means = np.array([s[1] for s in stats])
    lin = LossLinearization(len(probs), probs, means, z, 0.0, kind)
    err = lin.breakpoint_errors()
    return LossLinearization(len(probs), probs, means, z, float(err.max()), kind)


def _compute_minimax(W: int) -> LossLinearization:
    if W < 1:
        raise ValueError("W must be >= 1")
    if W == 1:
        return LossLinearization(1, np.array([1.0]), np.array([0.0]),
                                 np.array([-math.inf, math.inf]), nrm.loss(0.0), "minimax")
    lin = partition_from_boundaries(_symmetric_boundaries(W), "minimax")
    err = lin.breakpoint_errors()
    if err.max() - err.min() > SPREAD_TOL:
        raise ConvergenceError(f"error spread {err.max() - err.min():.3e} for W={W}", last=lin)
    return lin


# -- parameter cache ------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_cache(path=None, W_max: int = CACHE_MAX_W) -> Path:
    path = Path(path or _CACHE_FILE)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# stochknap minimax normal-loss partitions v{CACHE_VERSION}",
             "# W e_W | probs | means | interior boundaries"]
    for W in range(1, W_max + 1):
        lin = _compute_minimax(W)
        lines.append(" | ".join([
            f"{W} {_fmt(lin.max_error)}",
            " ".join(map(_fmt, lin.probs)),
            " ".join(map(_fmt, lin.means)),
            " ".join(map(_fmt, lin.boundaries[1:-1])),
        ]))
    tmp = path.with_suffix(".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


@functools.lru_cache(maxsize=1)
def _load_cache(path=_CACHE_FILE):
    table = {}
    try:
        text = Path(path).read_text().splitlines()
    except OSError:
        return table
    if not text or not text[0].endswith(f"v{CACHE_VERSION}"):
        return table
    for line in text:
        if line.startswith("#") or not line.strip():
            continue
        head, probs, means, inner = line.split("|")
        W, e = head.split()
        z = [float(v) for v in inner.split()]
        table[int(W)] = LossLinearization(
            int(W), np.array([float(v) for v in probs.split()]),
            np.array([float(v) for v in means.split()]),
            np.array([-math.inf, *z, math.inf]), float(e), "minimax")
    return table


@functools.lru_cache(maxsize=None)
def minimax_partition(W: int) -> LossLinearization:
    """Equal-error (minimax) partition with W regions, symmetric about zero."""
    W = int(W)
    cached = _load_cache().get(W)
    if cached is not None:
        return cached
    return _compute_minimax(W)


def equal_probability_partition(W: int) -> LossLinearization:
    """Partition with boundaries at the i/W quantiles."""
    if W < 1:
        raise ValueError("W must be >= 1")
    z = np.concatenate([[-math.inf], nrm.ppf(np.arange(1, W) / W), [math.inf]])
    phi = nrm.pdf_array(z)
    probs = np.full(W, 1.0 / W)
    means = W * (phi[:-1] - phi[1:])
    lin = LossLinearization(W, probs, means, z, 0.0, "equal-probability")
    return LossLinearization(W, probs, means, z, float(lin.breakpoint_errors().max()),
                             "equal-probability")


# -- error budget ---------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorBudget:
    """Segment counts guaranteeing an absolute objective tolerance ``epsilon``.

    ``W`` counts partition regions; the loss bound then has ``W + 1`` segments.
    """

    epsilon: float
    c: float
    V_max: float
    S_max: float
    W: int
    Q: int
    step: float
    delta_Q: float
    e_W: float
    A_max: float

    @property
    def segments(self) -> int:
        return self.W + 1

    @property
    def error_bound(self) -> float:
        return self.c * self.e_W * self.S_max + self.c * (self.A_max + self.e_W) * self.delta_Q

    def conditions_hold(self) -> bool:
        return check_conditions(self.epsilon, self.c, self.V_max, self.W, self.Q)


def sqrt_deviation(V_max: float, Q: int) -> float:
    return math.sqrt(V_max / Q) / 4.0


def check_conditions(epsilon, c, V_max, W, Q) -> bool:
    lin = minimax_partition(W)
    ok_w = lin.max_error <= epsilon / (2.0 * c * math.sqrt(V_max))
    ok_q = sqrt_deviation(V_max, Q) <= epsilon / (2.0 * c * (lin.A_max + lin.max_error))
    return ok_w and ok_q


def select_segments(epsilon: float, c: float, V_max: float, W_cap: int = 256) -> ErrorBudget:
    if epsilon <= 0 or c <= 0 or V_max <= 0:
        raise ValueError("epsilon, c and V_max must be positive")
    S_max = math.sqrt(V_max)
    target_w = epsilon / (2.0 * c * S_max)
    W = 1
    while minimax_partition(W).max_error > target_w:
        W += 1
        if W > W_cap:
            e_cap = minimax_partition(W_cap).max_error
            raise SegmentCapError(
                f"W would exceed the cap {W_cap}", reachable_epsilon=2.0 * c * S_max * e_cap)
    lin = minimax_partition(W)
    target_q = epsilon / (2.0 * c * (lin.A_max + lin.max_error))
    Q = max(1, math.ceil(V_max / (16.0 * target_q ** 2)))
    while Q > 1 and sqrt_deviation(V_max, Q - 1) <= target_q:
        Q -= 1
    while sqrt_deviation(V_max, Q) > target_q:
        Q += 1
    return ErrorBudget(epsilon, c, V_max, S_max, W, Q, V_max / Q, sqrt_deviation(V_max, Q),
                       lin.max_error, lin.A_max)
