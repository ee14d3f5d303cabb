"""Compiled inner loops: dense tableau simplex, Cholesky, Jacobi, triangular solves.

Everything here works on plain float64 arrays so it can be jitted. The public
wrappers with argument checking live in :mod:`drosc.numerics` and
:mod:`drosc.lpsolve`.
"""

from __future__ import annotations

import numpy as np
from numba import njit

OPTIMAL = 0
INFEASIBLE = 1
UNBOUNDED = 2
ITERATION_LIMIT = 3

FEAS_TOL = 1e-9
COST_TOL = 1e-10
PIVOT_TOL = 1e-11


# ---------------------------------------------------------------------------
# dense linear algebra
# ---------------------------------------------------------------------------


@njit(cache=True)
def cholesky_psd_kernel(a, tol):
    """Lower factor of a PSD matrix; zero pivots allowed when the column is null.

    Returns (L, ok).
    """
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s > tol:
            d = np.sqrt(s)
            L[j, j] = d
            for i in range(j + 1, n):
                v = a[i, j]
                for k in range(j):
                    v -= L[i, k] * L[j, k]
                L[i, j] = v / d
        else:
            if s < -tol:
                return L, False
            for i in range(j + 1, n):
                v = a[i, j]
                for k in range(j):
                    v -= L[i, k] * L[j, k]
                if abs(v) > np.sqrt(tol):
                    return L, False
    return L, True


@njit(cache=True)
def jacobi_eigenvalues(a):
    """All eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    n = a.shape[0]
    A = a.copy()
    if n == 1:
        return np.array([A[0, 0]])
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += A[i, j] * A[i, j]
    if scale == 0.0:
        return np.zeros(n)
    for _sweep in range(100):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += A[i, j] * A[i, j]
        if off <= 1e-30 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
                A[p, q] = 0.0
                A[q, p] = 0.0
    out = np.empty(n)
    for i in range(n):
        out[i] = A[i, i]
    return out


@njit(cache=True)
def min_eigenvalue_kernel(a):
    return jacobi_eigenvalues(a).min()


@njit(cache=True)
def forward_solve_rows(L, U):
    """Solve L z = u for every row u of U; zero pivots give zero coordinates."""
    m, d = U.shape
    Z = np.zeros((m, d))
    for r in range(m):
        for i in range(d):
            v = U[r, i]
            for k in range(i):
                v -= L[i, k] * Z[r, k]
            if L[i, i] != 0.0:
                Z[r, i] = v / L[i, i]
    return Z


# ---------------------------------------------------------------------------
# two-phase tableau simplex, Bland's rule
#
# Problem: min c'x  s.t.  A x = b, x >= 0.  One artificial column per row, so
# the artificial block of the final tableau holds B^{-1} and gives the duals.
# Tableau: rows 0..m-1 constraints, row m reduced costs; columns 0..n-1
# structural, n..n+m-1 artificial, last column rhs.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _pivot(T, r, c):
    ncol = T.shape[1]
    piv = T[r, c]
    for j in range(ncol):
        T[r, j] /= piv
    T[r, c] = 1.0
    for i in range(T.shape[0]):
        if i != r:
            f = T[i, c]
            if f != 0.0:
                for j in range(ncol):
                    T[i, j] -= f * T[r, j]
                T[i, c] = 0.0


@njit(cache=True)
def _iterate(T, basis, n_enter, m, max_iter):
    """Primal simplex iterations on the objective row m; columns >= n_enter never enter."""
    rhs = T.shape[1] - 1
    for _ in range(max_iter):
        col = -1
        for j in range(n_enter):
            if T[m, j] < -COST_TOL:
                col = j
                break
        if col < 0:
            return OPTIMAL
        row = -1
        best = 0.0
        for i in range(m):
            a = T[i, col]
            if a > PIVOT_TOL:
                ratio = T[i, rhs] / a
                if row < 0 or ratio < best - 1e-12 or (abs(ratio - best) <= 1e-12 and basis[i] < basis[row]):
                    row = i
                    best = ratio
        if row < 0:
            return UNBOUNDED
        _pivot(T, row, col)
        basis[row] = col
    return ITERATION_LIMIT


@njit(cache=True)
def phase_one(A, b, max_iter):
    """Build the tableau and drive it to a feasible basis.

    Returns (status, T, basis, flip).
    """
    m, n = A.shape
    T = np.zeros((m + 1, n + m + 1))
    flip = np.ones(m)
    basis = np.empty(m, dtype=np.int64)
    for i in range(m):
        sgn = 1.0
        if b[i] < 0.0:
            sgn = -1.0
        flip[i] = sgn
        for j in range(n):
            T[i, j] = sgn * A[i, j]
        T[i, n + i] = 1.0
        T[i, n + m] = sgn * b[i]
        basis[i] = n + i
    for j in range(n):
        s = 0.0
        for i in range(m):
            s += T[i, j]
        T[m, j] = -s
    s = 0.0
    for i in range(m):
        s += T[i, n + m]
    T[m, n + m] = -s
    status = _iterate(T, basis, n, m, max_iter)
    if status == ITERATION_LIMIT:
        return status, T, basis, flip
    if -T[m, n + m] > FEAS_TOL:
        return INFEASIBLE, T, basis, flip
    # push zero-level artificials out of the basis where a structural pivot exists
    for i in range(m):
        if basis[i] >= n:
            col = -1
            big = 1e-9
            for j in range(n):
                if abs(T[i, j]) > big:
                    big = abs(T[i, j])
                    col = j
            if col >= 0:
                _pivot(T, i, col)
                basis[i] = col
            else:
                # redundant row: keep it inert in phase two
                for j in range(n):
                    T[i, j] = 0.0
    return OPTIMAL, T, basis, flip


@njit(cache=True)
def phase_two(T, basis, flip, c, max_iter):
    """Optimize c on a copy of a phase-one tableau.

    Returns (status, x, value, y) with y the duals of the original rows.
    """
    m = basis.shape[0]
    n = c.shape[0]
    T = T.copy()
    basis = basis.copy()
    rhs = n + m
    cb = np.zeros(m)
    for i in range(m):
        if basis[i] < n:
            cb[i] = c[basis[i]]
    for j in range(n + m + 1):
        s = 0.0
        for i in range(m):
            s += cb[i] * T[i, j]
        cj = c[j] if j < n else 0.0
        T[m, j] = cj - s if j < rhs else -s
    status = _iterate(T, basis, n, m, max_iter)
    x = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = T[i, rhs]
    value = 0.0
    for j in range(n):
        value += c[j] * x[j]
    y = np.empty(m)
    for i in range(m):
        y[i] = -T[m, n + i] * flip[i]
    return status, x, value, y


@njit(cache=True)
def solve_standard(A, b, c, max_iter):
    status, T, basis, flip = phase_one(A, b, max_iter)
    m, n = A.shape
    if status != OPTIMAL:
        return status, np.zeros(n), np.nan, np.zeros(m)
    return phase_two(T, basis, flip, c, max_iter)


# ---------------------------------------------------------------------------
# uncertainty polytope {beta in simplex : |gamma - Sigma beta|_inf <= slack}
# ---------------------------------------------------------------------------


@njit(cache=True)
def polytope_system(sigma, gamma, slack):
    """Equality form in variables (beta, e, f): 3N columns, 2N+1 rows."""
    N = gamma.shape[0]
    A = np.zeros((2 * N + 1, 3 * N))
    b = np.zeros(2 * N + 1)
    for j in range(N):
        for k in range(N):
            A[j, k] = sigma[j, k]
            A[N + j, k] = -sigma[j, k]
        A[j, N + j] = 1.0
        A[N + j, 2 * N + j] = 1.0
        b[j] = slack + gamma[j]
        b[N + j] = slack - gamma[j]
    for k in range(N):
        A[2 * N, k] = 1.0
    b[2 * N] = 1.0
    return A, b


@njit(cache=True)
def min_slack_kernel(sigma, gamma):
    """Smallest slack making the polytope non-empty: min_beta |gamma - Sigma beta|_inf."""
    N = gamma.shape[0]
    A = np.zeros((2 * N + 1, 3 * N + 1))
    b = np.zeros(2 * N + 1)
    c = np.zeros(3 * N + 1)
    c[N] = 1.0
    for j in range(N):
        for k in range(N):
            A[j, k] = sigma[j, k]
            A[N + j, k] = -sigma[j, k]
        A[j, N] = -1.0
        A[N + j, N] = -1.0
        A[j, N + 1 + j] = 1.0
        A[N + j, 2 * N + 1 + j] = 1.0
        b[j] = gamma[j]
        b[N + j] = -gamma[j]
    for k in range(N):
        A[2 * N, k] = 1.0
    b[2 * N] = 1.0
    status, x, value, y = solve_standard(A, b, c, 50 * (3 * N + 2 * N + 2))
    return status, value, x[:N].copy()


@njit(cache=True)
def range_kernel(sigma, gamma, slack, obj):
    """min and max of obj'beta over the polytope from one phase-one pass.

    Returns (status, lo, hi, beta_lo, beta_hi).
    """
    N = gamma.shape[0]
    A, b = polytope_system(sigma, gamma, slack)
    n = A.shape[1]
    max_iter = 50 * (N + 2 * N + 1)
    status, T, basis, flip = phase_one(A, b, max_iter)
    if status != OPTIMAL:
        return status, np.nan, np.nan, np.zeros(N), np.zeros(N)
    c = np.zeros(n)
    for k in range(N):
        c[k] = obj[k]
    s1, x1, v1, _ = phase_two(T, basis, flip, c, max_iter)
    s2, x2, v2, _ = phase_two(T, basis, flip, -c, max_iter)
    if s1 != OPTIMAL:
        return s1, np.nan, np.nan, np.zeros(N), np.zeros(N)
    if s2 != OPTIMAL:
        return s2, np.nan, np.nan, np.zeros(N), np.zeros(N)
    return OPTIMAL, v1, -v2, x1[:N].copy(), x2[:N].copy()


@njit(cache=True, nogil=True)
def batch_min_slack(sigmas, gammas):
    M = gammas.shape[0]
    out = np.empty(M)
    for m in range(M):
        status, value, _ = min_slack_kernel(sigmas[m], gammas[m])
        out[m] = value if status == OPTIMAL else np.inf
    return out


@njit(cache=True, nogil=True)
def batch_min_eigenvalue(sigmas):
    M = sigmas.shape[0]
    out = np.empty(M)
    for m in range(M):
        out[m] = min_eigenvalue_kernel(sigmas[m])
    return out


@njit(cache=True, nogil=True)
def batch_range(sigmas, gammas, mus, slack, active):
    """Range of mu_m'beta over each perturbed polytope; NaN where infeasible or inactive."""
    M = gammas.shape[0]
    lo = np.full(M, np.nan)
    hi = np.full(M, np.nan)
    for m in range(M):
        if not active[m]:
            continue
        status, a, bb, _, _ = range_kernel(sigmas[m], gammas[m], slack, mus[m])
        if status == OPTIMAL:
            lo[m] = a
            hi[m] = bb
    return lo, hi
