"""Sample average approximation with large-deviation scenario sizing.

Phase 0 doubles the scenario count N from N0 until the sufficient condition
N >= log(2^n / alpha) / gamma holds, with the plug-in rate
gamma = (eps - delta)^2 / (3 sigma2_max).  Phase 1 then collects replications
at that N and certifies the incumbent once the CLT gap estimate
v_bar - g_hat falls below eps.  The tolerance eps is relative to |g_hat|.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import sim, sskp_lc
from .instances import Instance
from .model import MilpModel, solve

SCENARIO_MILP_MAX = 512


@dataclass
class SaaConfig:
    N0: int = 64
    warmup: int = 32
    M_max: int = 1000
    delta: float = 0.0
    alpha: float = 0.05
    epsilon: float = 1e-4
    N_eval: int = 100_000
    T_lim: float = 600.0
    N_cap: int | None = None      # fixed cap; None applies the T_lim/33 timing rule
    zero_var_reps: int = 8        # replications tried before accepting a zero variance
    inner_rel_tol: float = 1e-5
    inner: str = "auto"           # 'scenario', 'lc' or 'auto'

    def validate(self):
        if min(self.N0, self.warmup, self.M_max, self.N_eval) <= 0 or self.T_lim <= 0:
            raise ValueError("SAA sizes and time limit must be positive")
        if not 0 <= self.delta < self.epsilon:
            raise ValueError("delta must lie in [0, epsilon)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass
class Replication:
    x: np.ndarray
    value: float        # sampled optimum
    profits: np.ndarray  # per-scenario profit of x on its own sample
    W: np.ndarray = field(repr=False)
    seconds: float = 0.0


@dataclass
class Phase0Result:
    N: int
    status: str  # ld-satisfied, time-capped or n-capped
    sigma2_max: float
    N_required: float
    trajectory: list


@dataclass
class SaaResult:
    x: np.ndarray | None
    certified: bool
    gap: float
    gap_se: float
    replications: int
    N: int
    value: float      # out-of-sample estimate of the incumbent
    v_bar: float
    phase0: Phase0Result | None = None
    time: float = 0.0
    log: list = field(default_factory=list, repr=False)


def scenario_profits(inst: Instance, x, W) -> np.ndarray:
    return float(inst.values @ x) - inst.c * np.maximum(W @ x - inst.capacity, 0.0)


def build_scenario_model(inst: Instance, W) -> MilpModel:
    """max E[phi]'x - (c/N) sum_k t_k,  t_k >= w_k'x - C,  t_k >= 0."""
    N = len(W)
    m = MilpModel("saa")
    xs = m.add_vars("x", inst.n, "B")
    ts = m.add_vars("t", N, "C", lb=0.0)
    m.set_objective({**{j: inst.values[i] for i, j in enumerate(xs)}, **{t: -inst.c / N for t in ts}})
    for k in range(N):
        m.add_row(([ts[k]] + xs, [1.0] + list(-W[k])), ">=", -inst.capacity)
    return m


class _Saa:
    def __init__(self, inst: Instance, cfg: SaaConfig, seed: int):
        cfg.validate()
        self.inst, self.cfg, self.seed = inst, cfg, seed
        self.t0 = time.perf_counter()
        # incumbents are picked on one out-of-sample set and scored on another,
        # so the reported value carries no selection bias
        self.W_eval = sim.SampleStream(seed, cfg.N_eval, tag="saa-eval").weights(inst)
        self.W_score = sim.SampleStream(seed, cfg.N_eval, tag="saa-score").weights(inst)
        self.oos = {}            # selection bytes -> out-of-sample mean
        self.scores = {}         # selection bytes -> (mean, std) on the scoring set
        self.incumbent = None
        self.inc_value = -math.inf
        self.log = []

    def elapsed(self):
        return time.perf_counter() - self.t0

    def out_of_sample(self, x):
        key = x.tobytes()
        if key not in self.oos:
            self.oos[key] = sim.evaluate_static(x, self.inst, W=self.W_eval).mean
        return self.oos[key]

    def score(self, x):
        key = x.tobytes()
        if key not in self.scores:
            prof = sim.static_profits(x, self.inst, self.W_score)
            self.scores[key] = (float(prof.mean()), float(prof.std(ddof=1)))
        return self.scores[key]

    def replicate(self, N: int, r: int) -> Replication | None:
        t = time.perf_counter()
        W = sim.SampleStream(self.seed, N, tag=f"saa-rep{r}").weights(self.inst)
        inner = self.cfg.inner
        if inner == "auto":
            inner = "scenario" if N <= SCENARIO_MILP_MAX else "lc"
        left = max(1e-3, self.cfg.T_lim - self.elapsed())
        if inner == "scenario":
            sol = solve(build_scenario_model(self.inst, W), self.cfg.inner_rel_tol, left)
        else:
            sol = sskp_lc.solve_lc(self.inst, sskp_lc.ShortfallOracle("monte-carlo", W),
                                   self.cfg.inner_rel_tol, left)
        if sol.x is None or sol.status not in ("optimal", "feasible-limit"):
            self.log.append(("replication-failed", N, r, sol.status))
            return None
        x = np.round(sol.x[:self.inst.n])
        prof = scenario_profits(self.inst, x, W)
        rep = Replication(x, float(prof.mean()), prof, W, time.perf_counter() - t)
        v = self.out_of_sample(x)
        if v > self.inc_value:
            self.incumbent, self.inc_value = x, v
        return rep

    def sigma2_max(self, reps) -> float:
        """Largest per-replication sample variance of G(x_inc, w) - G(x_r, w)."""
        best = 0.0
        for rep in reps:
            d = scenario_profits(self.inst, self.incumbent, rep.W) - rep.profits
            if len(d) > 1:
                best = max(best, float(d.var(ddof=1)))
        return best

    def required_N(self, s2) -> float:
        cfg = self.cfg
        eps = cfg.epsilon * abs(self.inc_value) if math.isfinite(self.inc_value) else cfg.epsilon
        if s2 <= 0:
            return 0.0
        gamma = (eps - cfg.delta * abs(self.inc_value)) ** 2 / (3.0 * s2)
        return (self.inst.n * math.log(2.0) + math.log(1.0 / cfg.alpha)) / gamma

    def phase0(self) -> Phase0Result:
        cfg = self.cfg
        N, traj = cfg.N0, []
        r_base = 0
        while True:
            reps, s2, slow, tried = [], 0.0, False, 0
            while True:
                rep = self.replicate(N, r_base + tried)
                tried += 1
                if rep is not None:
                    reps.append(rep)
                    slow = slow or rep.seconds > cfg.T_lim / 33.0
                s2 = self.sigma2_max(reps) if self.incumbent is not None else 0.0
                failed = tried - len(reps)
                if (s2 > 0 or len(reps) >= cfg.zero_var_reps or failed >= cfg.zero_var_reps
                        or self.elapsed() > cfg.T_lim):
                    break
            r_base += tried + 1
            need = self.required_N(s2)
            traj.append((N, s2, need))
            self.log.append(("phase0", N, s2, need))
            if N >= need:
                return Phase0Result(N, "ld-satisfied", s2, need, traj)
            if self.elapsed() > cfg.T_lim:
                return Phase0Result(N, "time-capped", s2, need, traj)
            capped = (cfg.N_cap is not None and 2 * N > cfg.N_cap) or (cfg.N_cap is None and slow)
            if capped:
                return Phase0Result(N, "n-capped", s2, need, traj)
            N *= 2

    def phase1(self, N: int, r_base: int):
        cfg = self.cfg
        values = []
        gap, se, certified = math.inf, math.inf, False
        r = r_base
        while (len(values) < cfg.M_max and r - r_base < 2 * cfg.M_max
               and self.elapsed() <= cfg.T_lim):
            rep = self.replicate(N, r)
            r += 1
            if rep is None:
                continue
            values.append(rep.value)
            if len(values) < cfg.warmup:
                continue
            v = np.asarray(values)
            g, s_eval = self.score(self.incumbent)
            gap = float(v.mean() - g)
            se = math.sqrt(v.var(ddof=1) / len(v) + s_eval ** 2 / cfg.N_eval)
            if gap <= cfg.epsilon * abs(g):
                certified = True
                break
        if values and len(values) < cfg.warmup:
            v = np.asarray(values)
            gap = float(v.mean() - self.score(self.incumbent)[0])
            se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.inf
        return values, gap, se, certified


def saa_phase0(inst: Instance, cfg: SaaConfig | None = None, seed: int = 0) -> Phase0Result:
    return _Saa(inst, cfg or SaaConfig(), seed).phase0()


def saa_solve(inst: Instance, cfg: SaaConfig | None = None, seed: int = 0) -> SaaResult:
    cfg = cfg or SaaConfig()
    run = _Saa(inst, cfg, seed)
    p0 = run.phase0()
    values, gap, se, certified = run.phase1(p0.N, r_base=1_000_000)
    value = run.score(run.incumbent)[0] if run.incumbent is not None else math.nan
    return SaaResult(run.incumbent, certified, gap, se, len(values), p0.N, value,
                     float(np.mean(values)) if values else math.nan, p0, run.elapsed(), run.log)
