from __future__ import annotations

import math

import numpy as np
import pytest

from drosc.panel import PanelData


def bisect(f, lo, hi, tol=1e-13, iters=300):
    """Root of a monotone sign change on [lo, hi]."""
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def phi_erf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def random_panel(rng, T=30, N=4, t0=None, scale=1.0):
    t0 = t0 or T // 2
    x = rng.normal(1.0, 1.0, size=(T, N)) * scale
    w = rng.dirichlet(np.ones(N))
    y = x @ w + rng.normal(0, 0.3, T) * scale
    return PanelData(y, x, t0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
