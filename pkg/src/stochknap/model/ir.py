"""Solver-agnostic MILP model: variables, linear rows, PWL equalities, cut oracles.

Text format (one record per line, columns in insertion order)::

    stochknap-milp 1
    objective <max|min> <constant>
    var <name> <B|C> <lb> <ub> <objective coefficient>
    row <name> <L|E|G> <rhs> <col>:<coef> ...
    pwl <out col> <in col> <x_0> ... <x_k> | <y_0> ... <y_k>
    oracle <name>

Oracles are callables and only their names are written; ``load`` restores a
model without them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FEAS_TOL = 1e-6
INT_TOL = 1e-6

SENSES = ("L", "E", "G")
_SENSE_ALIASES = {"<=": "L", "=": "E", "==": "E", ">=": "G", "L": "L", "E": "E", "G": "G"}


@dataclass
class Cut:
    """Linear inequality returned by a cut oracle (``coefs @ x  sense  rhs``)."""

    idx: np.ndarray
    val: np.ndarray
    sense: str
    rhs: float

    def violation(self, x) -> float:
        lhs = float(np.dot(self.val, x[self.idx]))
        if self.sense == "L":
            return lhs - self.rhs
        if self.sense == "G":
            return self.rhs - lhs
        return abs(lhs - self.rhs)


@dataclass
class Pwl:
    out: int
    inp: int
    xs: np.ndarray
    ys: np.ndarray
    shape: str = field(init=False)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if len(self.xs) < 2 or len(self.xs) != len(self.ys):
            raise ValueError("PWL needs at least two matching breakpoints")
        if np.any(np.diff(self.xs) <= 0):
            raise ValueError("PWL breakpoints must be strictly increasing")
        d = np.diff(np.diff(self.ys) / np.diff(self.xs))
        if np.all(d <= 1e-12):
            self.shape = "concave"
        elif np.all(d >= -1e-12):
            self.shape = "convex"
        else:
            self.shape = "general"

    def __call__(self, v):
        return np.interp(v, self.xs, self.ys)

    def segment_line(self, k: int):
        """Slope and intercept of segment k (between breakpoints k and k+1)."""
        slope = (self.ys[k + 1] - self.ys[k]) / (self.xs[k + 1] - self.xs[k])
        return slope, self.ys[k] - slope * self.xs[k]

    def segment_of(self, v: float) -> int:
        k = int(np.searchsorted(self.xs, v, side="right")) - 1
        return min(max(k, 0), len(self.xs) - 2)


class MilpModel:
    def __init__(self, name: str = "model"):
        self.name = name
        self.names: list[str] = []
        self.kinds: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.obj: list[float] = []
        self.sense = "max"
        self.obj_constant = 0.0
        self.rows: list[tuple[str, np.ndarray, np.ndarray, str, float]] = []
        self.pwls: list[Pwl] = []
        self.oracles: list[tuple[str, Callable]] = []
        self._index: dict[str, int] = {}

    # -- construction ------------------------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_var(self, name, kind="C", lb=0.0, ub=math.inf, obj=0.0) -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable {name}")
        kind = kind.upper()[0]
        if kind not in ("B", "C"):
            raise ValueError(f"unknown variable kind {kind}")
        if kind == "B":
            lb, ub = max(0.0, lb), min(1.0, ub)
        self._index[name] = len(self.names)
        self.names.append(name)
        self.kinds.append(kind)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.obj.append(float(obj))
        return len(self.names) - 1

    def add_vars(self, prefix, n, kind="C", lb=0.0, ub=math.inf, obj=None) -> list[int]:
        obj = np.zeros(n) if obj is None else obj
        return [self.add_var(f"{prefix}{i}", kind, lb, ub, obj[i]) for i in range(n)]

    def var(self, name: str) -> int:
        return self._index[name]

    def _coefs(self, coefs):
        if isinstance(coefs, dict):
            idx = np.array([self._index[k] if isinstance(k, str) else k for k in coefs], dtype=np.int64)
            val = np.array(list(coefs.values()), dtype=float)
        else:
            idx, val = coefs
            idx = np.asarray(idx, dtype=np.int64)
            val = np.asarray(val, dtype=float)
        if len(idx) and (idx.min() < 0 or idx.max() >= self.n_vars):
            raise IndexError("row references an unknown variable")
        keep = val != 0.0
        return idx[keep], val[keep]

    def add_row(self, coefs, sense, rhs, name=None) -> int:
        idx, val = self._coefs(coefs)
        if sense not in _SENSE_ALIASES:
            raise ValueError(f"unknown row sense {sense!r}")
        s = _SENSE_ALIASES[sense]
        self.rows.append((name or f"r{len(self.rows)}", idx, val, s, float(rhs)))
        return len(self.rows) - 1

    def add_pwl(self, out, inp, xs, ys) -> int:
        out = self._index[out] if isinstance(out, str) else out
        inp = self._index[inp] if isinstance(inp, str) else inp
        self.pwls.append(Pwl(out, inp, xs, ys))
        return len(self.pwls) - 1

    def add_oracle(self, fn: Callable, name="oracle") -> None:
        """``fn(x) -> list[Cut]``; should return only cuts violated at x."""
        self.oracles.append((name, fn))

    def set_objective(self, coefs, sense="max", constant=0.0) -> None:
        if sense not in ("max", "min"):
            raise ValueError("sense must be 'max' or 'min'")
        self.sense = sense
        self.obj_constant = float(constant)
        self.obj = [0.0] * self.n_vars
        idx, val = self._coefs(coefs)
        for i, v in zip(idx, val):
            self.obj[i] += v

    # -- evaluation --------------------------------------------------------------------

    def objective_value(self, x) -> float:
        return float(np.dot(self.obj, x)) + self.obj_constant

    def row_violations(self, x) -> np.ndarray:
        out = np.zeros(len(self.rows))
        for r, (_, idx, val, s, rhs) in enumerate(self.rows):
            lhs = float(np.dot(val, x[idx]))
            out[r] = lhs - rhs if s == "L" else rhs - lhs if s == "G" else abs(lhs - rhs)
        return out

    def check(self, x, tol=FEAS_TOL, use_oracles=True) -> bool:
        """Feasibility of a full assignment: bounds, rows, integrality, PWL, oracles."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_vars,) or not np.all(np.isfinite(x)):
            return False
        lb, ub = np.array(self.lb), np.array(self.ub)
        if np.any(x < lb - tol) or np.any(x > ub + tol):
            return False
        b = np.array(self.kinds) == "B"
        if np.any(np.abs(x[b] - np.round(x[b])) > INT_TOL):
            return False
        if self.rows and self.row_violations(x).max() > tol:
            return False
        for p in self.pwls:
            if abs(x[p.out] - p(x[p.inp])) > tol or not p.xs[0] - tol <= x[p.inp] <= p.xs[-1] + tol:
                return False
        if use_oracles:
            for _, fn in self.oracles:
                if any(c.violation(x) > tol for c in fn(x)):
                    return False
        return True

    # -- text format -------------------------------------------------------------------

    def dumps(self) -> str:
        f = lambda v: format(float(v), ".17g")
        out = ["stochknap-milp 1", f"objective {self.sense} {f(self.obj_constant)}"]
        for k in range(self.n_vars):
            out.append(f"var {self.names[k]} {self.kinds[k]} {f(self.lb[k])} {f(self.ub[k])} {f(self.obj[k])}")
        for name, idx, val, s, rhs in self.rows:
            terms = " ".join(f"{i}:{f(v)}" for i, v in zip(idx, val))
            out.append(f"row {name} {s} {f(rhs)} {terms}".rstrip())
        for p in self.pwls:
            out.append(f"pwl {p.out} {p.inp} " + " ".join(map(f, p.xs)) + " | "
                       + " ".join(map(f, p.ys)))
        for name, _ in self.oracles:
            out.append(f"oracle {name}")
        return "\n".join(out) + "\n"

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "MilpModel":
        lines = text.splitlines()
        if not lines or lines[0].split() != ["stochknap-milp", "1"]:
            raise ValueError("not a stochknap model file")
        m = cls()
        obj_sense, obj_const = "max", 0.0
        for line in lines[1:]:
            tok = line.split()
            if not tok:
                continue
            tag = tok[0]
            if tag == "objective":
                obj_sense, obj_const = tok[1], float(tok[2])
            elif tag == "var":
                m.add_var(tok[1], tok[2], float(tok[3]), float(tok[4]), float(tok[5]))
            elif tag == "row":
                pairs = [t.split(":") for t in tok[4:]]
                idx = [int(a) for a, _ in pairs]
                val = [float(b) for _, b in pairs]
                m.add_row((idx, val), tok[2], float(tok[3]), name=tok[1])
            elif tag == "pwl":
                bar = tok.index("|")
                m.add_pwl(int(tok[1]), int(tok[2]), [float(t) for t in tok[3:bar]],
                          [float(t) for t in tok[bar + 1:]])
            elif tag == "oracle":
                continue
            else:
                raise ValueError(f"unknown record {tag!r}")
        m.sense, m.obj_constant = obj_sense, obj_const
        return m

    @classmethod
    def load(cls, path) -> "MilpModel":
        with open(path) as fh:
            return cls.loads(fh.read())
