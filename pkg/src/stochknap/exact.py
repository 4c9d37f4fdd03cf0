"""Closed-form objectives and exhaustive enumeration for small instances."""

from __future__ import annotations

import itertools

import numpy as np

from . import loss
from .instances import Instance

MAX_ENUM = 22


def shortfall(inst: Instance, X) -> np.ndarray:
    """Exact E[max(w'x - C, 0)] for binary rows of X under (multivariate) normal weights."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = X @ inst.mu
    if inst.cov is not None:
        v = np.einsum("ki,ij,kj->k", X, inst.cov, X)
    else:
        v = X @ inst.sigma ** 2
    s = np.sqrt(np.clip(v, 0.0, None))
    out = np.maximum(m - inst.capacity, 0.0)
    pos = s > 1e-12
    out[pos] = s[pos] * loss.standard_loss((inst.capacity - m[pos]) / s[pos])
    return out


def objective(inst: Instance, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(inst.values @ x - inst.c * shortfall(inst, x)[0])


def all_subsets(n: int) -> np.ndarray:
    if n > MAX_ENUM:
        raise ValueError(f"enumeration over 2^{n} subsets refused")
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def brute_force(inst: Instance, X=None):
    """Best subset by enumeration; returns (x, objective, all objectives)."""
    X = all_subsets(inst.n) if X is None else X
    z = X @ inst.values - inst.c * shortfall(inst, X)
    k = int(np.argmax(z))
    return X[k].copy(), float(z[k]), z


def sampled_objectives(inst: Instance, X, W) -> np.ndarray:
    """Sample-average objective of each subset row of X over weight scenarios W."""
    loads = np.asarray(X, dtype=float) @ np.asarray(W, dtype=float).T
    return X @ inst.values - inst.c * np.maximum(loads - inst.capacity, 0.0).mean(axis=1)
