"""Standard normal pdf/cdf/sf/quantile, scalar fast paths plus array versions."""

import math

import numpy as np
from scipy import special

SQRT2 = math.sqrt(2.0)
INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def pdf(x: float) -> float:
    if not math.isfinite(x):
        return 0.0
    return INV_SQRT2PI * math.exp(-0.5 * x * x)


def cdf(x: float) -> float:
    if x == math.inf:
        return 1.0
    if x == -math.inf:
        return 0.0
    return 0.5 * math.erfc(-x / SQRT2)


def sf(x: float) -> float:
    if x == math.inf:
        return 0.0
    if x == -math.inf:
        return 1.0
    return 0.5 * math.erfc(x / SQRT2)


def loss(y: float) -> float:
    """E[max(Z - y, 0)] for Z ~ N(0, 1)."""
    if y == math.inf:
        return 0.0
    if y == -math.inf:
        return math.inf
    return pdf(y) - y * sf(y)


def pdf_array(x):
    x = np.asarray(x, dtype=float)
    return INV_SQRT2PI * np.exp(-0.5 * x * x)


def cdf_array(x):
    return special.ndtr(np.asarray(x, dtype=float))


def sf_array(x):
    return special.ndtr(-np.asarray(x, dtype=float))


def ppf(p):
    return special.ndtri(p)


def region_stats(a: float, b: float) -> tuple[float, float]:
    """Probability mass and conditional mean of N(0,1) restricted to (a, b)."""
    if a >= 0.0:
        p = sf(a) - sf(b)
    else:
        p = cdf(b) - cdf(a)
    if p <= 0.0:
        raise ZeroDivisionError(f"empty normal region ({a}, {b})")
    return p, (pdf(a) - pdf(b)) / p
