import itertools

import numpy as np
import pytest
from scipy import stats

from stochknap import instances as I


def exact_objectives(inst, X=None):
    """Independent closed-form oracle: values'x - c s G((C - m)/s) via scipy.stats."""
    X = np.array(list(itertools.product((0.0, 1.0), repeat=inst.n))) if X is None else np.atleast_2d(X)
    m = X @ inst.mu
    S = inst.cov if inst.cov is not None else np.diag(inst.sigma ** 2)
    s = np.sqrt(np.clip(np.einsum("ki,ij,kj->k", X, S, X), 0, None))
    short = np.maximum(m - inst.capacity, 0.0)
    pos = s > 0
    y = (inst.capacity - m[pos]) / s[pos]
    short[pos] = s[pos] * (stats.norm.pdf(y) - y * stats.norm.sf(y))
    return X, X @ inst.values - inst.c * short


def brute(inst):
    X, z = exact_objectives(inst)
    k = int(np.argmax(z))
    return X[k], float(z[k]), z


def bed(n_inst, ns, cvs=(0.1, 0.2, 0.3), seed=0, **kw):
    """Seeded instances cycling through types, sizes, c_v and capacity levels."""
    out = []
    for k in range(n_inst):
        cfg = I.GeneratorConfig(type=I.TYPES[k % 9], n=ns[k % len(ns)], c_v=cvs[k % len(cvs)],
                                h=1 + (7 * k) % 10, seed=seed, index=k, **kw)
        out.append(I.generate(cfg))
    return out


@pytest.fixture
def ref_inst():
    return I.reference_instance(0.1)
