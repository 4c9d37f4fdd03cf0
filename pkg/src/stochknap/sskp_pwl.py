"""Piecewise-linear MILP models of the static stochastic knapsack.

With M = mu'x, V the knapsack variance and S = sqrt(V), the expected
shortfall is S * G((C - M) / S).  Replacing G by its Jensen lower bound makes
each segment linear in (S, M):

    P >= (A_i + e) S - (C - M) B_i,   i = 1..W,      P >= e S,

with e = 0 (Jensen, optimistic) or e = e_W (Edmundson-Madanski, pessimistic).
S is tied to V by a lower or upper PWL of the square root respectively.
Solving both variants brackets the optimum.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import loss, sim, sqrtpwl
from .instances import Instance
from .model import Cut, MilpModel, Solution, solve

DEFAULT_W = 100
DEFAULT_STEP = 0.1
COV_DROP = 1e-6
MVN_CUT_TOL = 1e-6


@dataclass
class BracketResult:
    upper: float
    lower: float
    x: np.ndarray | None
    gap: float
    status: str = "optimal"
    x_jensen: np.ndarray | None = None
    x_em: np.ndarray | None = None
    simulated: dict | None = None
    time: float = 0.0
    nodes: int = 0
    cuts: int = 0
    solutions: dict = field(default_factory=dict, repr=False)

    @property
    def partial(self) -> bool:
        return self.status != "optimal"


def variance_bound(inst: Instance) -> float:
    """Largest knapsack variance over binary selections (nonnegative part of 1'S1)."""
    if inst.cov is None:
        return float(np.sum(inst.sigma ** 2))
    S = inst.cov
    return float(np.trace(S) + np.clip(S - np.diag(np.diag(S)), 0, None).sum())


def sqrt_pwl_for(V_max, step=DEFAULT_STEP, kind="lower", mode="auto", cap=sqrtpwl.SEGMENT_CAP):
    """Square-root PWL on [0, V_max]; None when there is no variance at all.

    ``auto`` uses the raw step unless that exceeds the segment cap, in which
    case the step is widened to V_max / cap.
    """
    if V_max <= 0:
        return None
    if mode == "normalised":
        return sqrtpwl.build(V_max, min(step, 1.0), kind, normalised=True, cap=cap)
    if mode == "auto":
        step = max(step, V_max / cap * (1 + 1e-9))
    return sqrtpwl.build(V_max, min(step, V_max), kind, cap=cap)


def _base_model(inst: Instance, lin: loss.LossLinearization, sqp, bound, V_max):
    if bound not in ("jensen", "edmundson_madanski"):
        raise ValueError(f"unknown bound {bound!r}")
    e = lin.max_error if bound == "edmundson_madanski" else 0.0
    n = inst.n
    m = MilpModel(f"pwl-{bound}")
    xs = m.add_vars("x", n, "B", obj=inst.values)
    M = m.add_var("M", lb=0.0, ub=float(np.sum(np.clip(inst.mu, 0, None))))
    V = m.add_var("V", lb=0.0, ub=V_max)
    s_top = 0.0 if sqp is None else float(sqp.values[-1] + sqp.shift)
    S = m.add_var("S", lb=0.0, ub=s_top)
    P = m.add_var("P", lb=0.0)
    m.set_objective({**{j: inst.values[j] for j in xs}, P: -inst.c})
    m.add_row(([M] + xs, [1.0] + list(-inst.mu)), "=", 0.0, name="mean")
    if sqp is not None:
        bx, by = sqp.points()
        m.add_pwl(S, V, bx, by)
    C = inst.capacity
    for i in range(lin.W):
        m.add_row(([P, S, M], [1.0, -(lin.A[i] + e), -lin.B[i]]), ">=", -C * lin.B[i],
                  name=f"seg{i + 1}")
    m.add_row(([P, S], [1.0, -e]), ">=", 0.0, name=f"seg{lin.W + 1}")
    return m, xs, V


def build_pwl_model(inst: Instance, lin: loss.LossLinearization, sqp, bound="jensen") -> MilpModel:
    """Independent normal weights: V = sigma^2 ' x."""
    if inst.cov is not None:
        raise ValueError("instance has a covariance matrix; use build_pwl_model_mvn")
    V_max = variance_bound(inst)
    m, xs, V = _base_model(inst, lin, sqp, bound, V_max)
    m.add_row(([V] + xs, [1.0] + list(-inst.sigma ** 2)), "=", 0.0, name="variance")
    return m


def _filtered_cov(inst: Instance) -> np.ndarray:
    S = np.array(inst.cov, dtype=float)
    off = ~np.eye(inst.n, dtype=bool)
    S[off & (np.abs(S) < COV_DROP)] = 0.0
    return S


class VarianceOracle:
    """Supporting hyperplanes of V >= x'Sx at the current point."""

    def __init__(self, Sigma, xs, V):
        self.Sigma = Sigma
        self.xs = np.asarray(xs)
        self.V = V
        self.idx = np.concatenate([[V], self.xs])

    def __call__(self, point):
        xh = point[self.xs]
        g = self.Sigma @ xh
        q = float(xh @ g)
        if point[self.V] >= q - MVN_CUT_TOL:
            return []
        # V - 2 g'x >= -q
        return [Cut(self.idx, np.concatenate([[1.0], -2.0 * g]), "G", -q)]


def build_pwl_model_mvn(inst: Instance, lin: loss.LossLinearization, sqp, bound="jensen") -> MilpModel:
    if inst.cov is None:
        return build_pwl_model(inst, lin, sqp, bound)
    if np.linalg.eigvalsh(inst.cov).min() < -1e-8 * max(1.0, np.abs(inst.cov).max()):
        raise ValueError("covariance matrix is not positive semidefinite")
    Sigma = _filtered_cov(inst)
    V_max = variance_bound(inst)
    m, xs, V = _base_model(inst, lin, sqp, bound, V_max)
    off = Sigma - np.diag(np.diag(Sigma))
    if np.all(off >= 0):
        # x_i^2 = x_i at binary points, and the off-diagonal part is nonnegative
        m.add_row(([V] + xs, [1.0] + list(-np.diag(Sigma))), ">=", 0.0, name="diag")
    m.add_oracle(VarianceOracle(Sigma, xs, V), name="variance")
    return m


def _xvec(sol: Solution, n):
    return None if sol.x is None else np.round(sol.x[:n])


def solve_bracket(inst: Instance, W: int = DEFAULT_W, sqrt_step: float = DEFAULT_STEP,
                  rel_tol: float = 1e-4, time_limit: float = 600.0,
                  sim_runs: int = sim.STATIC_RUNS, seed: int = 0, sqrt_mode: str = "auto",
                  lin: loss.LossLinearization | None = None) -> BracketResult:
    """Solve the Jensen and Edmundson-Madanski models and pair the answers.

    U is the Jensen model's best bound and L the Edmundson-Madanski
    incumbent's objective, so L <= optimum <= U even when both solves stop
    at the relative tolerance.
    """
    t0 = time.perf_counter()
    lin = lin or loss.minimax_partition(W)
    V_max = variance_bound(inst)
    builder = build_pwl_model_mvn if inst.cov is not None else build_pwl_model
    sols = {}
    for bound, kind in (("jensen", "lower"), ("edmundson_madanski", "upper")):
        sqp = sqrt_pwl_for(V_max, sqrt_step, kind, sqrt_mode)
        left = max(1e-3, time_limit - (time.perf_counter() - t0))
        sols[bound] = solve(builder(inst, lin, sqp, bound), rel_tol, left)
    sj, se = sols["jensen"], sols["edmundson_madanski"]
    status = "optimal" if sj.status == se.status == "optimal" else \
        (sj.status if sj.status != "optimal" else se.status)
    xj, xe = _xvec(sj, inst.n), _xvec(se, inst.n)
    U, L = sj.bound, se.objective
    simulated = None
    if xj is None or xe is None:
        x = xe if xe is not None else xj
    elif np.array_equal(xj, xe):
        x = xe
    else:
        W_s = sim.SampleStream(seed, sim_runs).weights(inst)
        rj = sim.evaluate_static(xj, inst, W=W_s)
        re = sim.evaluate_static(xe, inst, W=W_s)
        simulated = {"jensen": rj, "edmundson_madanski": re}
        x = xj if rj.mean > re.mean else xe
    gap = (U - L) / abs(L) if L and math.isfinite(L) else math.inf
    return BracketResult(U, L, x, gap, status, xj, xe, simulated, time.perf_counter() - t0,
                         sj.nodes + se.nodes, sj.cuts + se.cuts, sols)
