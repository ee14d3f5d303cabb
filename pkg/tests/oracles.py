"""Independent brute-force oracles used by the property and acceptance tests."""

from __future__ import annotations

import itertools

import numpy as np
from numba import njit


@njit(cache=True)
def grid_tau(sigma, gamma, slack, mu, mu_y, k):
    """Scan the 1/k grid of the simplex (N <= 4) inside the polytope.

    Returns (count, tau at the grid argmin of tau^2, min tau, max tau) where
    tau(beta) = mu_y - mu'beta.
    """
    n = gamma.size
    h = 1.0 / k
    count = 0
    best = np.inf
    best_tau = np.nan
    tmin = np.inf
    tmax = -np.inf
    r = np.empty(n)
    for b2 in range(k + 1 if n >= 2 else 1):
        for b3 in range(k + 1 - b2 if n >= 3 else 1):
            # first point of the inner loop, then incremental updates
            b4max = k - b2 - b3 if n >= 4 else 0
            beta = np.zeros(n)
            beta[0] = (k - b2 - b3) * h
            if n >= 2:
                beta[1] = b2 * h
            if n >= 3:
                beta[2] = b3 * h
            for i in range(n):
                s = 0.0
                for j in range(n):
                    s += sigma[i, j] * beta[j]
                r[i] = gamma[i] - s
            fit = 0.0
            for j in range(n):
                fit += mu[j] * beta[j]
            for b4 in range(b4max + 1):
                ok = True
                for i in range(n):
                    if abs(r[i]) > slack:
                        ok = False
                        break
                if ok:
                    count += 1
                    t = mu_y - fit
                    if t * t < best:
                        best = t * t
                        best_tau = t
                    tmin = min(tmin, t)
                    tmax = max(tmax, t)
                if n >= 4:
                    # beta_4 += h, beta_1 -= h
                    for i in range(n):
                        r[i] -= h * (sigma[i, 3] - sigma[i, 0])
                    fit += h * (mu[3] - mu[0])
    return count, best_tau, tmin, tmax


def vertex_optimum(sigma, gamma, slack, c, sense="min"):
    """Optimum of c'beta over the polytope by enumerating all basic solutions."""
    n = gamma.size
    rows = [np.eye(n)[i] for i in range(n)] + [sigma[i] for i in range(n)] + [sigma[i] for i in range(n)]
    rhs = [0.0] * n + list(gamma + slack) + list(gamma - slack)
    best = None
    for active in itertools.combinations(range(3 * n), n - 1):
        A = np.vstack([np.ones(n)] + [rows[a] for a in active])
        b = np.array([1.0] + [rhs[a] for a in active])
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        beta = np.linalg.solve(A, b)
        if beta.min() < -1e-9 or np.abs(gamma - sigma @ beta).max() > slack + 1e-9:
            continue
        v = float(c @ beta)
        if best is None or (v < best if sense == "min" else v > best):
            best = v
    return best
