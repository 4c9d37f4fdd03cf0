"""Piecewise-linear bounds of the square root on a uniform grid.

The chord interpolant through ``0, s, 2s, ..., Qs`` lies below ``sqrt`` and the
gap is largest in the first segment, at ``v = s/4``, where it equals
``sqrt(s)/4``.  Shifting the chords up by that amount gives an upper bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SEGMENT_CAP = 100_000


class SegmentCountError(ValueError):
    pass


@dataclass(frozen=True)
class SqrtPwl:
    step: float
    V_max: float
    breakpoints: np.ndarray
    values: np.ndarray  # sqrt at breakpoints, without shift
    slopes: np.ndarray
    shift: float
    kind: str

    @property
    def Q(self) -> int:
        return len(self.slopes)

    @property
    def max_deviation(self) -> float:
        return math.sqrt(self.step) / 4.0

    def points(self):
        """Breakpoints and shifted values, ready for a PWL equality row."""
        return self.breakpoints.copy(), self.values + self.shift

    def __call__(self, v):
        return evaluate(self, v)


def build(V_max: float, s: float, kind: str = "lower", normalised: bool = False,
          cap: int = SEGMENT_CAP) -> SqrtPwl:
    """Chord interpolant (``kind='lower'``) or chord + sqrt(s)/4 (``'upper'``).

    With ``normalised=True`` the step is read on [0, 1] and rescaled by V_max,
    which is the same grid as a raw step of ``s * V_max``.
    """
    if kind not in ("lower", "upper"):
        raise ValueError(f"unknown kind {kind!r}")
    if s <= 0:
        raise ValueError("step must be positive")
    step = s * V_max if normalised else s
    if V_max < step * (1 - 1e-12):
        raise ValueError(f"V_max={V_max} smaller than step {step}")
    Q = max(1, math.ceil(V_max / step - 1e-12))
    if Q > cap:
        raise SegmentCountError(
            f"{Q} segments exceed the cap {cap}; use a larger step or the normalised domain")
    b = step * np.arange(Q + 1, dtype=float)
    vals = np.sqrt(b)
    slopes = np.diff(vals) / step
    shift = math.sqrt(step) / 4.0 if kind == "upper" else 0.0
    return SqrtPwl(step, float(V_max), b, vals, slopes, shift, kind)


def evaluate(p: SqrtPwl, v):
    v_arr = np.asarray(v, dtype=float)
    top = p.breakpoints[-1]
    if np.any(v_arr < -1e-12 * max(1.0, top)) or np.any(v_arr > top * (1 + 1e-12) + 1e-12):
        raise ValueError("v outside the linearisation domain")
    out = np.interp(v_arr, p.breakpoints, p.values) + p.shift
    return float(out) if v_arr.ndim == 0 else out
