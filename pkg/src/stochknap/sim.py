"""Monte-Carlo evaluation with Latin hypercube sampling and common random numbers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .instances import Instance, stream

STATIC_RUNS = 100_000
POLICY_RUNS = 200


@dataclass(frozen=True)
class SampleStream:
    """Stratified uniforms keyed by (seed, runs, dimension).

    Two evaluations built from equal streams see bit-identical draws.
    """

    seed: int = 0
    runs: int = STATIC_RUNS
    tag: str = "lhs"

    def uniforms(self, dim: int) -> np.ndarray:
        u = np.empty((self.runs, dim))
        for j in range(dim):
            rng = stream(self.seed, j, f"{self.tag}-{self.runs}")
            perm = rng.permutation(self.runs)
            u[:, j] = (perm + rng.random(self.runs)) / self.runs
        return np.clip(u, 1e-300, 1.0 - 2 ** -53)

    def weights(self, inst: Instance) -> np.ndarray:
        return inst.weights_from_uniform(self.uniforms(inst.n))


@dataclass
class SimReport:
    mean: float
    se: float
    runs: int
    p5: float
    p50: float
    p95: float
    failures: int = 0
    samples: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, z, failures=0, keep=False) -> "SimReport":
        z = np.asarray(z, dtype=float)
        if not len(z):
            return cls(math.nan, math.nan, 0, math.nan, math.nan, math.nan, failures)
        se = float(z.std(ddof=1) / math.sqrt(len(z))) if len(z) > 1 else 0.0
        q = np.quantile(z, [0.05, 0.5, 0.95])
        return cls(float(z.mean()), se, len(z), float(q[0]), float(q[1]), float(q[2]), failures,
                   z if keep else None)


def static_profits(x, inst: Instance, W) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.n,) or W.shape[1] != inst.n:
        raise ValueError("selection and instance dimensions differ")
    return float(inst.values @ x) - inst.c * np.maximum(W @ x - inst.capacity, 0.0)


def evaluate_static(x, inst: Instance, stream_: SampleStream | None = None, W=None,
                    keep=False) -> SimReport:
    """Mean profit E[phi]'x - c max(w'x - C, 0) over sampled weights."""
    if W is None:
        W = (stream_ or SampleStream()).weights(inst)
    return SimReport.from_samples(static_profits(x, inst, W), keep=keep)


# -- sequential policies ----------------------------------------------------------------


@dataclass(frozen=True)
class PathState:
    """What a policy sees before deciding on item ``index`` (0-based)."""

    index: int
    capacity: float
    history: tuple  # realised weights of items 0..index-1


def simulate_path(policy, inst: Instance, w) -> tuple[float, np.ndarray]:
    q = inst.capacity
    x = np.zeros(inst.n)
    value = 0.0
    for i in range(inst.n):
        if policy(PathState(i, q, tuple(w[:i]))):
            x[i] = 1.0
            value += inst.values[i]
            q -= w[i]
    return value + inst.c * min(q, 0.0), x


def evaluate_policy(policy, inst: Instance, stream_: SampleStream | None = None,
                    W=None, keep=False) -> SimReport:
    """Simulate ``policy(state) -> 0/1`` along sampled weight paths.

    Weights of a path are drawn jointly up front, which for correlated laws
    has the same distribution as drawing each conditionally on the past.
    """
    if W is None:
        W = (stream_ or SampleStream(runs=POLICY_RUNS)).weights(inst)
    out, failures = [], 0
    for w in W:
        try:
            out.append(simulate_path(policy, inst, w)[0])
        except Exception:
            failures += 1
    return SimReport.from_samples(out, failures, keep=keep)


def static_policy(x):
    x = np.asarray(x)
    return lambda state: bool(x[state.index] > 0.5)
