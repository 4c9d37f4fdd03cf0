"""Thin wrapper around the HiGHS dual simplex for node relaxations.

Rows are split into a permanent block (model rows), a block of active cuts
that may shrink and grow, and last a block of node-local rows that is
replaced whenever the node changes.
The simplex basis is kept between solves, so consecutive nodes warm start.
"""

from __future__ import annotations

import highspy
import numpy as np

INF = highspy.kHighsInf


def _bounds(sense, rhs):
    if sense == "L":
        return -INF, rhs
    if sense == "G":
        return rhs, INF
    return rhs, rhs


class LpRelaxation:
    def __init__(self, cost, lb, ub, rows, tol=1e-9):
        """``cost`` is maximised; ``rows`` is a list of (idx, val, sense, rhs)."""
        self.n = len(cost)
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", 1)
        h.setOptionValue("presolve", "off")
        h.setOptionValue("random_seed", 0)
        h.setOptionValue("primal_feasibility_tolerance", tol)
        h.setOptionValue("dual_feasibility_tolerance", tol)
        self.h = h
        c = -np.asarray(cost, dtype=float)
        lo = np.where(np.isfinite(lb), lb, -INF).astype(float)
        hi = np.where(np.isfinite(ub), ub, INF).astype(float)
        h.addVars(self.n, lo, hi)
        h.changeColsCost(self.n, np.arange(self.n, dtype=np.int32), c)
        self.n_perm = 0
        self.n_cut = 0
        self.n_local = 0
        self._local_rows = []
        self._local_key = None
        self.add_rows(rows)

    def _push(self, rows):
        if not rows:
            return
        lower, upper, starts, index, value = [], [], [], [], []
        nnz = 0
        for idx, val, sense, rhs in rows:
            lo, hi = _bounds(sense, rhs)
            lower.append(lo)
            upper.append(hi)
            starts.append(nnz)
            index.extend(int(i) for i in idx)
            value.extend(float(v) for v in val)
            nnz += len(idx)
        self.h.addRows(len(rows), np.array(lower), np.array(upper), nnz,
                       np.array(starts, dtype=np.int32), np.array(index, dtype=np.int32),
                       np.array(value, dtype=float))

    def add_rows(self, rows):
        """Append permanent rows; only valid before any cut is added."""
        if not rows:
            return
        assert self.n_cut == 0
        local, key = self._pop_local()
        self._push(rows)
        self.n_perm += len(rows)
        self.set_local(local, key)

    def add_cuts(self, rows):
        if not rows:
            return
        local, key = self._pop_local()
        self._push(rows)
        self.n_cut += len(rows)
        self.set_local(local, key)

    def remove_cuts(self, positions):
        """Drop cut rows by their position inside the cut block."""
        if not len(positions):
            return
        idx = self.n_perm + np.asarray(sorted(positions), dtype=np.int32)
        self.h.deleteRows(len(idx), idx)
        self.n_cut -= len(idx)

    def _pop_local(self):
        rows, key = self._local_rows, self._local_key
        if self.n_local:
            first = self.n_perm + self.n_cut
            self.h.deleteRows(self.n_local, np.arange(first, first + self.n_local, dtype=np.int32))
        self.n_local = 0
        self._local_rows, self._local_key = [], None
        return rows, key

    def set_local(self, rows, key=None):
        """Replace the node-local block; a matching ``key`` skips the rebuild."""
        if key is not None and key == self._local_key:
            return
        self._pop_local()
        self._push(rows)
        self.n_local = len(rows)
        self._local_rows, self._local_key = list(rows), key

    def set_bounds(self, lb, ub):
        lo = np.where(np.isfinite(lb), lb, -INF).astype(float)
        hi = np.where(np.isfinite(ub), ub, INF).astype(float)
        self.h.changeColsBounds(self.n, np.arange(self.n, dtype=np.int32), lo, hi)

    def solve(self):
        """Return (status, x, objective) with status in {optimal, infeasible, unbounded, error}."""
        self.h.run()
        st = self.h.getModelStatus()
        if st == highspy.HighsModelStatus.kUnknown:
            # a stale warm-start basis occasionally stalls on degenerate rows
            self.h.clearSolver()
            self.h.run()
            st = self.h.getModelStatus()
            if st == highspy.HighsModelStatus.kUnknown:
                self.h.setOptionValue("simplex_strategy", 4)
                self.h.clearSolver()
                self.h.run()
                self.h.setOptionValue("simplex_strategy", 1)
                st = self.h.getModelStatus()
        if st == highspy.HighsModelStatus.kOptimal:
            x = np.array(self.h.getSolution().col_value)
            return "optimal", x, -self.h.getInfo().objective_function_value
        if st == highspy.HighsModelStatus.kInfeasible:
            return "infeasible", None, -np.inf
        if st in (highspy.HighsModelStatus.kUnbounded, highspy.HighsModelStatus.kUnboundedOrInfeasible):
            return "unbounded", None, np.inf
        return "error", None, np.nan
