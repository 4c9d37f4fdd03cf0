"""Branch-and-bound over LP relaxations with PWL branching and lazy cut oracles.

Each node carries column bounds and, for every PWL equality, the breakpoint
interval its input is confined to.  The relaxation of ``y = f(v)`` on that
interval is the convex hull of the graph.  For a concave ``f`` the upper
side is the family of segment lines, which are valid everywhere and are
therefore added lazily as global rows; only the chord below is node-local.
Convex PWLs mirror this and general ones use both hull chains locally.

Cuts from oracles and lazy PWL lines are global and kept for the whole
solve in a pool.  Only cuts that were binding recently stay in the LP; a
pool cut that becomes violated again is put back before any oracle is asked.

Nodes are explored depth first until an incumbent exists, then best bound.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .ir import FEAS_TOL, INT_TOL, MilpModel
from .lp import LpRelaxation

PWL_TOL = 1e-7
CUT_TOL = 1e-6
FRAC_CUT_ROUNDS = 1
ROOT_CUT_ROUNDS = 20
MAX_CUT_ROUNDS = 5000
PURGE_MIN = 50    # active cuts kept regardless of age
PURGE_AGE = 10    # LP solves a cut may stay slack before leaving the LP


class _CutPool:
    def __init__(self, n):
        self.n = n
        self.A = np.zeros((64, n))
        self.lo = np.zeros(64)
        self.hi = np.zeros(64)
        self.size = 0
        self.rows = []
        self.active = []      # pool ids in LP cut-block order
        self.is_active = np.zeros(64, dtype=bool)
        self.age = np.zeros(64, dtype=np.int64)

    def add(self, rows):
        ids = []
        for idx, val, sense, rhs in rows:
            if self.size == len(self.lo):
                grow = len(self.lo)
                self.A = np.vstack([self.A, np.zeros((grow, self.n))])
                self.lo = np.concatenate([self.lo, np.zeros(grow)])
                self.hi = np.concatenate([self.hi, np.zeros(grow)])
                self.is_active = np.concatenate([self.is_active, np.zeros(grow, dtype=bool)])
                self.age = np.concatenate([self.age, np.zeros(grow, dtype=np.int64)])
            k = self.size
            np.add.at(self.A[k], np.asarray(idx, dtype=np.int64), val)
            self.lo[k] = rhs if sense in ("G", "E") else -math.inf
            self.hi[k] = rhs if sense in ("L", "E") else math.inf
            self.rows.append((idx, val, sense, rhs))
            self.size += 1
            ids.append(k)
        return ids

    def violations(self, x):
        act = self.A[:self.size] @ x
        return np.maximum(self.lo[:self.size] - act, act - self.hi[:self.size])


@dataclass
class Solution:
    status: str
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    nodes: int = 0
    time: float = 0.0
    cuts: int = 0
    names: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "feasible-limit") and self.x is not None

    def __getitem__(self, name):
        return self.x[self.names.index(name)]


@dataclass
class _Node:
    lo: np.ndarray
    hi: np.ndarray
    ranges: tuple
    bound: float
    depth: int


def _hull(xs, ys, upper):
    """Monotone chain over points sorted by x; returns vertex indices."""
    pts = []
    for k in range(len(xs)):
        while len(pts) >= 2:
            i, j = pts[-2], pts[-1]
            cross = (xs[j] - xs[i]) * (ys[k] - ys[i]) - (ys[j] - ys[i]) * (xs[k] - xs[i])
            if (cross >= 0) if upper else (cross <= 0):
                pts.pop()
            else:
                break
        pts.append(k)
    return pts


def _line(x0, y0, x1, y1):
    slope = (y1 - y0) / (x1 - x0)
    return slope, y0 - slope * x0


class _Search:
    def __init__(self, m: MilpModel, rel_tol, time_limit, node_limit):
        self.m = m
        self.rel_tol = rel_tol
        self.deadline = time.perf_counter() + time_limit
        self.node_limit = node_limit
        self.sign = 1.0 if m.sense == "max" else -1.0
        self.cost = self.sign * np.asarray(m.obj, dtype=float)
        self.binaries = np.flatnonzero(np.array(m.kinds) == "B")
        self.lb0 = np.array(m.lb, dtype=float)
        self.ub0 = np.array(m.ub, dtype=float)
        for p in m.pwls:
            self.lb0[p.inp] = max(self.lb0[p.inp], p.xs[0])
            self.ub0[p.inp] = min(self.ub0[p.inp], p.xs[-1])
        rows = [(idx, val, s, rhs) for _, idx, val, s, rhs in m.rows]
        self.lp = LpRelaxation(self.cost, self.lb0, self.ub0, rows)
        self.pool = _CutPool(m.n_vars)
        self.lazy_lines = set()
        self.n_cuts = 0
        self.nodes = 0
        self.inc_x = None
        self.inc_val = -math.inf
        self.pruned_bound = -math.inf

    # -- node relaxation ---------------------------------------------------------------

    def _apply(self, node: _Node):
        lo, hi = node.lo.copy(), node.hi.copy()
        local = []
        for p, (a, b) in zip(self.m.pwls, node.ranges):
            lo[p.inp] = max(lo[p.inp], p.xs[a])
            hi[p.inp] = min(hi[p.inp], p.xs[b])
            ys = p.ys[a:b + 1]
            lo[p.out] = max(lo[p.out], ys.min())
            hi[p.out] = min(hi[p.out], ys.max())
            if b - a == 1 or p.shape != "general":
                slope, icpt = _line(p.xs[a], p.ys[a], p.xs[b], p.ys[b])
                sense = "G" if p.shape == "concave" else "L"
                if b - a == 1:
                    sense = "E"
                local.append((np.array([p.out, p.inp]), np.array([1.0, -slope]), sense, icpt))
                continue
            xs = p.xs[a:b + 1]
            for upper in (True, False):
                hv = _hull(xs, ys, upper)
                for i, j in zip(hv[:-1], hv[1:]):
                    slope, icpt = _line(xs[i], ys[i], xs[j], ys[j])
                    local.append((np.array([p.out, p.inp]), np.array([1.0, -slope]),
                                  "L" if upper else "G", icpt))
        self.lp.set_bounds(lo, hi)
        self.lp.set_local(local, key=node.ranges)

    def _pwl_cuts(self, x, node):
        """Lazy segment lines for concave/convex PWLs violated at x."""
        rows = []
        for q, (p, (a, b)) in enumerate(zip(self.m.pwls, node.ranges)):
            if p.shape == "general" or b - a == 1:
                continue
            v, y = x[p.inp], x[p.out]
            viol = y - p(v) if p.shape == "concave" else p(v) - y
            if viol <= PWL_TOL:
                continue
            k = min(max(p.segment_of(v), a), b - 1)
            if (q, k) in self.lazy_lines:
                continue
            self.lazy_lines.add((q, k))
            slope, icpt = p.segment_line(k)
            rows.append((np.array([p.out, p.inp]), np.array([1.0, -slope]),
                         "L" if p.shape == "concave" else "G", icpt))
        return rows

    def _oracle_cuts(self, x):
        rows = []
        for _, fn in self.m.oracles:
            for c in fn(x):
                if c.violation(x) > CUT_TOL:
                    rows.append((c.idx, c.val, c.sense, c.rhs))
        return rows

    def _activate(self, ids):
        pool = self.pool
        self.lp.add_cuts([pool.rows[k] for k in ids])
        pool.active.extend(ids)
        pool.is_active[ids] = True
        pool.age[ids] = 0

    def _new_cuts(self, rows):
        ids = self.pool.add(rows)
        self.n_cuts += len(ids)
        self._activate(ids)

    def _age_and_purge(self, viol):
        pool = self.pool
        act = np.array(pool.active, dtype=np.int64)
        if not len(act):
            return
        slack = viol[act] < -CUT_TOL
        pool.age[act] = np.where(slack, pool.age[act] + 1, 0)
        if len(act) <= PURGE_MIN:
            return
        old = np.flatnonzero(pool.age[act] >= PURGE_AGE)
        if len(old):
            self.lp.remove_cuts(old)
            pool.is_active[act[old]] = False
            keep = np.ones(len(act), dtype=bool)
            keep[old] = False
            pool.active = list(act[keep])

    def _integral(self, x):
        if not len(self.binaries):
            return True
        xb = x[self.binaries]
        return bool(np.all(np.abs(xb - np.round(xb)) <= INT_TOL))

    def _threshold(self):
        return self.inc_val + self.rel_tol * max(abs(self.inc_val), 1e-10)

    def _evaluate(self, node):
        """Solve the node with its cut loop; returns (status, x, value)."""
        self._apply(node)
        rounds = 0
        limit = ROOT_CUT_ROUNDS if node.depth == 0 else FRAC_CUT_ROUNDS
        while True:
            status, x, z = self.lp.solve()
            if status != "optimal":
                return status, x, z
            if z <= self._threshold():
                return "pruned", x, z
            viol = self.pool.violations(x) if self.pool.size else np.zeros(0)
            back = np.flatnonzero((viol > CUT_TOL) & ~self.pool.is_active[:self.pool.size])
            if len(back):
                self._activate(list(back))
                continue
            new = self._pwl_cuts(x, node)
            if self.m.oracles and (rounds < limit or self._integral(x)):
                new += self._oracle_cuts(x)
            if not new:
                self._age_and_purge(viol)
                return "optimal", x, z
            rounds += 1
            if rounds > MAX_CUT_ROUNDS:
                return "error", x, z
            self._new_cuts(new)

    def _branch(self, x, node):
        """Pick the most violated entity; returns children (preferred child last)."""
        best, choice = 0.0, None
        for j in self.binaries:
            f = x[j] - math.floor(x[j])
            s = min(f, 1.0 - f)
            if s > INT_TOL and s > best:
                best, choice = s, ("bin", j)
        for q, (p, (a, b)) in enumerate(zip(self.m.pwls, node.ranges)):
            if b - a < 2:
                continue
            fv = p(x[p.inp])
            s = abs(x[p.out] - fv) / max(1.0, abs(fv))
            if abs(x[p.out] - fv) > PWL_TOL and s > best:
                best, choice = s, ("pwl", q)
        if choice is None:
            return None
        kind, j = choice
        if kind == "bin":
            down_hi, up_lo = node.hi.copy(), node.lo.copy()
            down_hi[j], up_lo[j] = 0.0, 1.0
            down = _Node(node.lo, down_hi, node.ranges, 0.0, node.depth + 1)
            up = _Node(up_lo, node.hi, node.ranges, 0.0, node.depth + 1)
            return [down, up] if x[j] >= 0.5 else [up, down]
        p = self.m.pwls[j]
        a, b = node.ranges[j]
        v = x[p.inp]
        inner = p.xs[a + 1:b]
        k = a + 1 + int(np.argmin(np.abs(inner - v)))
        left = list(node.ranges)
        right = list(node.ranges)
        left[j], right[j] = (a, k), (k, b)
        lc = _Node(node.lo, node.hi, tuple(left), 0.0, node.depth + 1)
        rc = _Node(node.lo, node.hi, tuple(right), 0.0, node.depth + 1)
        return [rc, lc] if v <= p.xs[k] else [lc, rc]

    def _accept(self, x, z):
        x = x.copy()
        x[self.binaries] = np.round(x[self.binaries])
        if z > self.inc_val:
            self.inc_val, self.inc_x = z, x

    # -- driver ------------------------------------------------------------------------

    def run(self, start=None) -> Solution:
        t0 = time.perf_counter()
        m = self.m
        if start is not None:
            self.inc_x = np.asarray(start, dtype=float).copy()
            self.inc_val = float(self.cost @ self.inc_x)
        ranges = tuple((0, len(p.xs) - 1) for p in m.pwls)
        root = _Node(self.lb0.copy(), self.ub0.copy(), ranges, math.inf, 0)
        stack, heap, seq = [root], [], 0
        status = "optimal"
        while stack or heap:
            if time.perf_counter() > self.deadline or (
                    self.node_limit is not None and self.nodes >= self.node_limit):
                status = "feasible-limit"
                break
            node = stack.pop() if stack else heapq.heappop(heap)[2]
            if node.bound <= self._threshold():
                self.pruned_bound = max(self.pruned_bound, node.bound)
                continue
            self.nodes += 1
            st, x, z = self._evaluate(node)
            if st == "infeasible":
                continue
            if st == "unbounded":
                if node.depth == 0:
                    return self._finish("unbounded", t0)
                st = "error"
            if st == "error":
                return self._finish("error", t0, [node.bound], stack, heap)
            if st == "pruned":
                self.pruned_bound = max(self.pruned_bound, min(z, node.bound))
                continue
            z = min(z, node.bound)
            children = self._branch(x, node)
            if children is None:
                self._accept(x, z)
                if stack:
                    for nd in stack:
                        heapq.heappush(heap, (-nd.bound, seq, nd))
                        seq += 1
                    stack = []
                continue
            for c in children:
                c.bound = z
                if self.inc_x is None:
                    stack.append(c)
                else:
                    heapq.heappush(heap, (-z, seq, c))
                    seq += 1
        if status == "optimal" and self.inc_x is None:
            status = "infeasible"
        return self._finish(status, t0, (), stack, heap)

    def _finish(self, status, t0, extra=(), stack=(), heap=()):
        if status == "unbounded":
            bound = math.inf
        elif status == "infeasible":
            bound = -math.inf
        else:
            open_b = [nd.bound for nd in stack] + [-k for k, _, _ in heap]
            bound = max([self.inc_val, self.pruned_bound, *extra, *open_b])
        inc = self.inc_val
        if self.inc_x is not None and math.isfinite(bound):
            gap = max(0.0, bound - inc) / max(abs(inc), 1e-10)
        else:
            gap = math.inf
        sg, c0 = self.sign, self.m.obj_constant
        obj = sg * inc + c0 if self.inc_x is not None else math.nan
        return Solution(status, self.inc_x, obj, sg * bound + c0, gap, self.nodes,
                        time.perf_counter() - t0, self.n_cuts, list(self.m.names))


def solve(m: MilpModel, rel_tol: float = 1e-4, time_limit: float = 600.0,
          node_limit=None) -> Solution:
    return _Search(m, rel_tol, time_limit, node_limit).run()


def solve_with_warm_start(m: MilpModel, start, rel_tol: float = 1e-4,
                          time_limit: float = 600.0, node_limit=None) -> Solution:
    """As :func:`solve`, seeding the incumbent with ``start`` if it is feasible.

    ``start`` is a full assignment (array in column order or a name->value
    mapping); infeasible or empty starts are ignored.
    """
    x0 = None
    if start is not None and len(start):
        if isinstance(start, dict):
            if len(start) == m.n_vars:
                x0 = np.array([start[nm] for nm in m.names], dtype=float)
        else:
            x0 = np.asarray(start, dtype=float)
        if x0 is not None and not m.check(x0):
            x0 = None
    return _Search(m, rel_tol, time_limit, node_limit).run(start=x0)
