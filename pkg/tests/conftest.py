import math

import numpy as np
import pytest


def central_diff(f, x, h=1e-5):
    """Plain central differences, written independently of quitlab.gradcheck."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def brute_sqdist(a, b):
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def brute_dist(a, b, metric):
    s = brute_sqdist(a, b)
    return math.sqrt(s) if metric == "l2" else s


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
