"""Dynamic stochastic knapsack: dynamic-programming oracle and receding horizon.

Items arrive in index order.  Before item i the decision maker knows the
residual capacity q and the realised weights of earlier items; after the last
item the overfill q < 0 is charged c per unit, i.e. the terminal value is
c * min(q, 0).

``sdp_solve`` runs the backward recursion

    F_i(q, z) = max(F_{i+1}(q, z'), E[phi_i] + E[F_{i+1}(q - w_i, z')])

on a capacity grid (linear interpolation, exact linear extrapolation below
the grid) with an equal-probability discretisation of each weight law.  For
banded correlation the state also holds z, the standardised last weight.
Discrete and deterministic weights use an exact memoised recursion instead.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg, stats

from . import _normal as nrm
from . import sim, sskp_lc, sskp_pwl
from .instances import Instance, moment_match

DskpState = sim.PathState

GRID_DIV = 400
K_POINTS = 15
Z_POINTS = 41
Z_MAX = 4.5
TAIL_SIGMAS = 5.0
STATE_CAP = 50_000_000
EXACT_CAP = 5_000_000
BANDED_TOL = 1e-9


# -- conditional normal law ------------------------------------------------------------


def conditional_update(mu, Sigma, observed, jitter=1e-10):
    """Law of the unobserved components given ``observed`` = [(index, value), ...].

    Returns (indices, mu_cond, Sigma_cond) over the unobserved indices in
    increasing order.
    """
    mu, Sigma = np.asarray(mu, dtype=float), np.asarray(Sigma, dtype=float)
    n = len(mu)
    obs = dict(observed)
    a = np.array(sorted(obs), dtype=int)
    b = np.array([i for i in range(n) if i not in obs], dtype=int)
    if not len(a):
        return b, mu.copy(), Sigma.copy()
    z = np.array([obs[i] for i in a]) - mu[a]
    S11 = Sigma[np.ix_(a, a)]
    S21 = Sigma[np.ix_(b, a)]
    scale = max(1.0, float(np.abs(np.diag(S11)).max()))
    try:
        f = linalg.cho_factor(S11 + jitter * scale * np.eye(len(a)), lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("observed block is singular beyond jitter") from exc
    K = linalg.cho_solve(f, S21.T).T
    mu_c = mu[b] + K @ z
    S_c = Sigma[np.ix_(b, b)] - K @ S21.T
    return b, mu_c, 0.5 * (S_c + S_c.T)


def banded_rho(inst: Instance) -> float | None:
    """rho if the covariance is sigma_i sigma_j rho^|i-j|, else None."""
    if inst.cov is None:
        return None
    s = inst.sigma
    if inst.n < 2 or np.any(s <= 0):
        return None
    R = inst.cov / np.outer(s, s)
    rho = float(R[0, 1])
    k = np.arange(inst.n)
    if np.allclose(R, rho ** np.abs(k[:, None] - k[None, :]), atol=BANDED_TOL, rtol=0):
        return rho
    return None


# -- weight discretisation -------------------------------------------------------------


def _std_normal_points(K):
    """Conditional means of K equal-probability regions of N(0, 1)."""
    b = nrm.ppf(np.arange(1, K) / K)
    pdf = np.concatenate([[0.0], nrm.pdf_array(b), [0.0]])
    return (pdf[:-1] - pdf[1:]) * K


def discretise(inst: Instance, i: int, K: int = K_POINTS):
    """Support points and masses approximating the marginal law of item i."""
    if inst.distribution == "discrete":
        keep = inst.probs[i] > 0
        return inst.support[i][keep], inst.probs[i][keep]
    m, s = inst.mu[i], inst.sigma[i]
    p = np.full(K, 1.0 / K)
    if s == 0:
        return np.array([m]), np.array([1.0])
    if inst.distribution in ("normal", "multivariate-normal"):
        return m + s * _std_normal_points(K), p
    edges = np.arange(1, K) / K
    if inst.distribution == "gamma":
        g = moment_match("gamma", m, s / m)
        t = stats.gamma.ppf(edges, g["shape"], scale=g["scale"])
        # E[X; X <= t] = mean * F_{shape+1}(t)
        part = m * stats.gamma.cdf(t, g["shape"] + 1, scale=g["scale"])
    else:
        g = moment_match("lognormal", m, s / m)
        t = np.exp(g["mu_log"] + g["sigma_log"] * nrm.ppf(edges))
        part = m * nrm.cdf_array((np.log(t) - g["mu_log"] - g["sigma_log"] ** 2) / g["sigma_log"])
    cum = np.concatenate([[0.0], part, [m]])
    return np.diff(cum) * K, p


# -- policy ----------------------------------------------------------------------------


@dataclass
class DskpPolicy:
    inst: Instance
    value: float
    mode: str                      # 'grid', 'banded' or 'exact'
    q_grid: np.ndarray | None = None
    z_grid: np.ndarray | None = None
    F: list = field(default_factory=list, repr=False)          # F[i] over the grid, i = 0..n
    decisions: list = field(default_factory=list, repr=False)  # decisions[i] over the grid
    points: list = field(default_factory=list, repr=False)     # per-item (support, mass) or z-noise
    rho: float | None = None
    time: float = 0.0
    _exact: object = field(default=None, repr=False)

    @property
    def n(self):
        return self.inst.n

    def stage_value(self, i, q, z=None) -> float:
        """F_i at an arbitrary state (i = n gives the terminal value)."""
        if self.mode == "exact":
            return self._exact(i, float(q))
        if self.mode == "grid":
            return float(_interp(self.q_grid, self.F[i], np.array([q]), self.inst.c)[0])
        return float(_interp_2d(self.q_grid, self.z_grid, self.F[i], q, z, self.inst.c))

    def option_values(self, i, q, z=None):
        """(skip, take) values of item i at residual capacity q."""
        inst = self.inst
        if self.mode == "banded":
            zs, p = self._noise(i, z)
            w = inst.mu[i] + inst.sigma[i] * zs
            nxt = [self.stage_value(i + 1, q - wk, zk) for wk, zk in zip(w, zs)]
            skip = sum(pk * self.stage_value(i + 1, q, zk) for pk, zk in zip(p, zs))
            return skip, inst.values[i] + float(np.dot(p, nxt))
        w, p = self.points[i]
        take = inst.values[i] + sum(pk * self.stage_value(i + 1, q - wk) for wk, pk in zip(w, p))
        return self.stage_value(i + 1, q), take

    def _noise(self, i, z):
        xi, p = self.points[0]
        if i == 0 or z is None:
            return xi, p
        r = self.rho
        return r * z + math.sqrt(max(0.0, 1 - r * r)) * xi, p

    def decide(self, state: DskpState) -> bool:
        z = None
        if self.mode == "banded" and state.index > 0:
            j = state.index - 1
            z = (state.history[j] - self.inst.mu[j]) / self.inst.sigma[j]
        skip, take = self.option_values(state.index, state.capacity, z)
        return take > skip

    __call__ = decide

    def dump_csv(self, path):
        """Decision table: one row per (item, capacity[, z]) grid state."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            if self.mode == "exact":
                wr.writerow(["item", "capacity", "value", "decision"])
                for (i, q), (v, d) in sorted(self._exact.table.items()):
                    wr.writerow([i + 1, f"{q:.12g}", f"{v:.12g}", int(d)])
                return
            banded = self.mode == "banded"
            wr.writerow(["item", "capacity"] + (["z"] if banded else []) + ["value", "decision"])
            for i in range(self.n):
                Fi, Di = self.F[i], self.decisions[i]
                for a, q in enumerate(self.q_grid):
                    if banded:
                        for b, z in enumerate(self.z_grid):
                            wr.writerow([i + 1, f"{q:.12g}", f"{z:.12g}", f"{Fi[a, b]:.12g}", int(Di[a, b])])
                    else:
                        wr.writerow([i + 1, f"{q:.12g}", f"{Fi[a]:.12g}", int(Di[a])])


def _interp(qg, F, q, c):
    """F on the grid, extended with slope c below it and held flat above it."""
    q = np.asarray(q, dtype=float)
    out = np.interp(q, qg, F)
    lo = q < qg[0]
    if np.any(lo):
        out[lo] = F[0] + c * (q[lo] - qg[0])
    return out


def _interp_2d(qg, zg, F, q, z, c):
    z = float(np.clip(z, zg[0], zg[-1]))
    j = min(int(np.searchsorted(zg, z, side="right")) - 1, len(zg) - 2)
    t = (z - zg[j]) / (zg[j + 1] - zg[j])
    a = _interp(qg, F[:, j], [q], c)[0]
    b = _interp(qg, F[:, j + 1], [q], c)[0]
    return (1 - t) * a + t * b


class _ExactRecursion:
    def __init__(self, inst, points):
        self.inst, self.points = inst, points
        self.table = {}
        self._f = lru_cache(maxsize=None)(self._value)

    def __call__(self, i, q):
        return self._f(i, q)

    def _value(self, i, q):
        inst = self.inst
        if i == inst.n:
            return inst.c * min(q, 0.0)
        w, p = self.points[i]
        skip = self._f(i + 1, q)
        take = inst.values[i] + math.fsum(pk * self._f(i + 1, q - wk) for wk, pk in zip(w, p))
        self.table[(i, q)] = (max(skip, take), take > skip)
        if len(self.table) > EXACT_CAP:
            raise ValueError(f"exact recursion exceeds {EXACT_CAP} states")
        return max(skip, take)


def _capacity_grid(inst: Instance, step):
    C = inst.capacity
    cv = float(np.max(inst.sigma / np.where(inst.mu > 0, inst.mu, 1.0))) if inst.n else 0.0
    q_min = -float(np.sum(np.abs(inst.mu))) * (1.0 + TAIL_SIGMAS * cv)
    m = int(math.ceil((C - q_min) / step))
    return C - step * np.arange(m, -1, -1)


def sdp_solve(inst: Instance, grid_step: float | None = None, K: int = K_POINTS,
              z_points: int = Z_POINTS, state_cap: int = STATE_CAP) -> DskpPolicy:
    t0 = time.perf_counter()
    n, c = inst.n, inst.c
    rho = banded_rho(inst)
    if inst.cov is not None and rho is None:
        off = inst.cov - np.diag(np.diag(inst.cov))
        if np.any(off != 0):
            raise ValueError("dynamic program needs independent or banded-correlation weights")
    if inst.distribution == "discrete" or np.all(inst.sigma == 0):
        points = [discretise(inst, i, K) for i in range(n)]
        rec = _ExactRecursion(inst, points)
        v = rec(0, float(inst.capacity))
        return DskpPolicy(inst, v, "exact", points=points, time=time.perf_counter() - t0, _exact=rec)

    step = grid_step or inst.capacity / GRID_DIV
    qg = _capacity_grid(inst, step)
    nz = z_points if rho is not None else 1
    size = len(qg) * nz * n
    if size > state_cap:
        raise ValueError(f"state space of {size} grid values exceeds the cap {state_cap}")
    # terminal value, held flat above C
    T = c * np.minimum(qg, 0.0)
    if rho is None:
        points = [discretise(inst, i, K) for i in range(n)]
        F, D = [None] * n + [T], [None] * n
        for i in range(n - 1, -1, -1):
            w, p = points[i]
            take = inst.values[i] + sum(pk * _interp(qg, F[i + 1], qg - wk, c) for wk, pk in zip(w, p))
            D[i] = take > F[i + 1]
            F[i] = np.maximum(F[i + 1], take)
        v = float(_interp(qg, F[0], [inst.capacity], c)[0])
        return DskpPolicy(inst, v, "grid", qg, None, F, D, points, None, time.perf_counter() - t0)

    zg = np.linspace(-Z_MAX, Z_MAX, nz)
    xi, p = _std_normal_points(K), np.full(K, 1.0 / K)
    s = math.sqrt(max(0.0, 1 - rho * rho))
    F, D = [None] * n + [np.repeat(T[:, None], nz, axis=1)], [None] * n
    for i in range(n - 1, -1, -1):
        Fn = F[i + 1]
        skip = np.empty((len(qg), nz))
        take = np.empty((len(qg), nz))
        for b, z in enumerate(zg):
            zs = rho * z + s * xi if i > 0 else xi
            acc_s = np.zeros(len(qg))
            acc_t = np.zeros(len(qg))
            for zk, pk in zip(zs, p):
                zc = float(np.clip(zk, zg[0], zg[-1]))
                j = min(int(np.searchsorted(zg, zc, side="right")) - 1, nz - 2)
                t = (zc - zg[j]) / (zg[j + 1] - zg[j])
                wk = inst.mu[i] + inst.sigma[i] * zk
                col = lambda qq: (1 - t) * _interp(qg, Fn[:, j], qq, c) + t * _interp(qg, Fn[:, j + 1], qq, c)
                acc_s += pk * col(qg)
                acc_t += pk * col(qg - wk)
            skip[:, b] = acc_s
            take[:, b] = inst.values[i] + acc_t
        D[i] = take > skip
        F[i] = np.maximum(skip, take)
    pol = DskpPolicy(inst, 0.0, "banded", qg, zg, F, D, [(xi, p)], rho)
    pol.value = float(max(pol.option_values(0, inst.capacity)))
    pol.time = time.perf_counter() - t0
    return pol


# -- receding horizon ------------------------------------------------------------------

SINGLE_STAGE = ("pwl", "pwl-mvn", "lc", "lc-mc")


class RecedingHorizon:
    """Algorithm-style re-optimisation policy usable with ``sim.evaluate_policy``.

    At item k the law of items k..n-1 is updated on the realised history
    (skipped with ``ignore_correlation``) and the static problem over those
    items is solved with capacity q.  Only x_k is implemented.
    """

    def __init__(self, inst: Instance, single_stage: str = "lc", ignore_correlation: bool = False,
                 W: int = sskp_pwl.DEFAULT_W, sqrt_step: float = sskp_pwl.DEFAULT_STEP,
                 rel_tol: float = 1e-4, time_limit: float = 60.0, mc_runs: int = sskp_lc.MC_RUNS,
                 seed: int = 0):
        if single_stage not in SINGLE_STAGE:
            raise ValueError(f"unknown single-stage method {single_stage!r}")
        if single_stage == "pwl-mvn" and inst.cov is None:
            raise ValueError("pwl-mvn needs a covariance matrix")
        self.inst, self.method, self.ignore = inst, single_stage, ignore_correlation
        self.W, self.sqrt_step, self.rel_tol, self.time_limit = W, sqrt_step, rel_tol, time_limit
        self.mc_runs, self.seed = mc_runs, seed
        self.lin = sskp_pwl.loss.minimax_partition(W) if single_stage.startswith("pwl") else None
        self._first = None
        self.degraded = 0
        self.solves = 0

    def conditional_law(self, state: DskpState):
        """(mu, cov or None) of items index..n-1 given the realised history."""
        inst, k = self.inst, state.index
        if inst.cov is None or self.ignore or k == 0:
            return inst.mu[k:], None if inst.cov is None or self.ignore else inst.cov[k:, k:]
        _, mu_c, S_c = conditional_update(inst.mu, inst.cov, list(enumerate(state.history)))
        return mu_c, S_c

    def remaining(self, state: DskpState) -> Instance:
        inst, k = self.inst, state.index
        idx = np.arange(k, inst.n)
        mu_c, S_c = self.conditional_law(state)
        if S_c is None:
            sub = inst.subset(idx, state.capacity)
            if sub.cov is not None:
                sub.cov, sub.distribution = None, "normal"
            return sub
        return inst.subset(idx, state.capacity, mu_c, S_c)

    def _solve(self, sub: Instance):
        self.solves += 1
        if self.method.startswith("pwl"):
            res = sskp_pwl.solve_bracket(sub, self.W, self.sqrt_step, self.rel_tol, self.time_limit,
                                         sim_runs=10_000, seed=self.seed, lin=self.lin)
            return res.x
        mode = None
        if self.method == "lc-mc":
            mode = "monte-carlo"
        orc = sskp_lc.make_oracle(sub, mode, self.mc_runs, self.seed)
        return sskp_lc.selection(sskp_lc.solve_lc(sub, orc, self.rel_tol, self.time_limit), sub.n)

    def decide(self, state: DskpState) -> bool:
        inst, k = self.inst, state.index
        if state.capacity <= 0:
            # every further unit of weight is charged in full
            return bool(inst.values[k] > inst.c * self.conditional_law(state)[0][0])
        if k == 0 and self._first is not None and self._first[0] == state.capacity:
            return self._first[1]
        try:
            x = self._solve(self.remaining(state))
        except Exception:
            x = None
        if x is None:
            self.degraded += 1
            return False
        d = bool(x[0] > 0.5)
        if k == 0:
            self._first = (state.capacity, d)
        return d

    __call__ = decide


def receding_horizon(inst: Instance, single_stage: str = "lc", ignore_correlation: bool = False,
                     path=None, **kw):
    """Run one sample path; returns (profit, x, degraded solve count)."""
    pol = RecedingHorizon(inst, single_stage, ignore_correlation, **kw)
    if path is None:
        path = sim.SampleStream(kw.get("seed", 0), 1, tag="rh-path").weights(inst)[0]
    profit, x = sim.simulate_path(pol, inst, np.asarray(path, dtype=float))
    return profit, x, pol.degraded
