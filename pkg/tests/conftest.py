import numpy as np
import pytest


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at flat vector ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic, numeric, floor=1e-6):
    """Largest coordinatewise |a - n| / max(|a|, |n|, floor * scale).

    ``scale`` is ``max(1, largest |a| or |n|)``: coordinates many orders of
    magnitude below the rest of the gradient are only resolved by central
    differences to an absolute accuracy set by the large ones.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if not a.size:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(n))))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float(np.max(np.abs(a - n) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
