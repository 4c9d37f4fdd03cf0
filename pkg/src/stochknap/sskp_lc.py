"""Lazy-cut method: epigraph master MILP with subgradient cuts on the shortfall.

The master problem is ``max E[phi]'x - c theta`` over binary x and theta >= 0.
Whenever a relaxation optimum underestimates the shortfall q(x) the cut
``theta >= q(x^) + g'(x - x^)`` is added globally.  The closed-form oracle
uses the knapsack standard deviation sqrt(x' S x) with S the (diagonal or
full) covariance, which is convex in x, so cuts taken at fractional points
are valid as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _normal as nrm
from . import sim, sskp_pwl
from .instances import Instance
from .model import Cut, MilpModel, Solution, solve, solve_with_warm_start

MC_RUNS = 1000
DEGENERATE_VAR = 1e-12
CUT_TOL = 1e-6


@dataclass
class ShortfallOracle:
    mode: str  # 'normal', 'mvn' or 'monte-carlo'
    samples: np.ndarray | None = None
    seed: int = 0

    @property
    def replications(self) -> int:
        return 0 if self.samples is None else len(self.samples)


def make_oracle(inst: Instance, mode=None, runs=MC_RUNS, seed=0) -> ShortfallOracle:
    if mode is None:
        mode = {"normal": "normal", "multivariate-normal": "mvn"}.get(inst.distribution, "monte-carlo")
    if mode == "monte-carlo":
        W = sim.SampleStream(seed, runs, tag="lc-mc").weights(inst)
        return ShortfallOracle(mode, W, seed)
    if mode not in ("normal", "mvn"):
        raise ValueError(f"unknown oracle mode {mode!r}")
    return ShortfallOracle(mode)


def shortfall_and_subgradient(oracle: ShortfallOracle, xh, inst: Instance):
    """Expected shortfall E[max(w'x - C, 0)] at x^ and a subgradient."""
    xh = np.asarray(xh, dtype=float)
    C = inst.capacity
    if oracle.mode == "monte-carlo":
        W = oracle.samples
        over = (W @ xh) > C
        value = float(np.maximum(W @ xh - C, 0.0).mean())
        return value, (W * over[:, None]).mean(axis=0)
    m = float(inst.mu @ xh)
    Sx = inst.covariance() @ xh if oracle.mode == "mvn" else inst.sigma ** 2 * xh
    v = float(xh @ Sx)
    if v <= DEGENERATE_VAR:
        return max(m - C, 0.0), inst.mu * float(m > C)
    s = math.sqrt(v)
    y = (C - m) / s
    return s * nrm.loss(y), inst.mu * nrm.sf(y) + nrm.pdf(y) * Sx / s


class _LazyShortfall:
    def __init__(self, oracle, inst, xs, theta):
        self.oracle, self.inst = oracle, inst
        self.xs, self.theta = np.asarray(xs), theta
        self.idx = np.concatenate([[theta], self.xs])
        self.log = []

    def __call__(self, point):
        xh = np.clip(point[self.xs], 0.0, 1.0)
        q, g = shortfall_and_subgradient(self.oracle, xh, self.inst)
        if point[self.theta] >= q - CUT_TOL:
            return []
        self.log.append((xh.copy(), q))
        # theta - g'x >= q - g'x^
        return [Cut(self.idx, np.concatenate([[1.0], -g]), "G", q - float(g @ xh))]


def build_lc_model(inst: Instance, oracle: ShortfallOracle) -> tuple[MilpModel, _LazyShortfall]:
    m = MilpModel("lc")
    xs = m.add_vars("x", inst.n, "B")
    theta = m.add_var("theta", lb=0.0)
    m.set_objective({**{j: inst.values[j] for j in xs}, theta: -inst.c})
    cb = _LazyShortfall(oracle, inst, xs, theta)
    m.add_oracle(cb, name=f"shortfall-{oracle.mode}")
    return m, cb


def solve_lc(inst: Instance, oracle: ShortfallOracle | None = None, rel_tol: float = 1e-4,
             time_limit: float = 600.0, start=None) -> Solution:
    oracle = oracle or make_oracle(inst)
    m, cb = build_lc_model(inst, oracle)
    if start is not None:
        x0 = np.asarray(start, dtype=float)
        q, _ = shortfall_and_subgradient(oracle, x0, inst)
        sol = solve_with_warm_start(m, np.concatenate([x0, [q]]), rel_tol, time_limit)
    else:
        sol = solve(m, rel_tol, time_limit)
    sol.cut_log = cb.log
    return sol


def selection(sol: Solution, n: int):
    return None if sol.x is None else np.round(sol.x[:n])


def normal_approx_heuristic(inst: Instance, W: int = sskp_pwl.DEFAULT_W,
                            sqrt_step: float = sskp_pwl.DEFAULT_STEP, rel_tol: float = 1e-4,
                            time_limit: float = 600.0, sim_runs: int = sim.STATIC_RUNS,
                            seed: int = 0) -> sskp_pwl.BracketResult:
    """Bracket the moment-matched normal model, then score x* under the true law."""
    res = sskp_pwl.solve_bracket(inst.normal_counterpart(), W, sqrt_step, rel_tol, time_limit,
                                 sim_runs, seed)
    if res.x is not None:
        true = sim.evaluate_static(res.x, inst, sim.SampleStream(seed, sim_runs))
        res.simulated = dict(res.simulated or {}, true=true)
    return res
