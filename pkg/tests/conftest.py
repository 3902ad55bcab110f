import numpy as np
import pytest


def central_diff(f, x, h=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    xf, gf = x.reshape(-1), g.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        up = f()
        xf[i] = orig - h
        down = f()
        xf[i] = orig
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a = np.concatenate([np.ravel(v) for v in a]) if isinstance(a, list) else np.ravel(a)
    b = np.concatenate([np.ravel(v) for v in b]) if isinstance(b, list) else np.ravel(b)
    scale = max(np.abs(a).max(initial=0), np.abs(b).max(initial=0), 1e-300)
    return np.abs(a - b).max(initial=0) / scale


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
