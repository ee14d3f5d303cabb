"""Linear programs over the uncertainty polytope and simplex-constrained least squares.

The polytope is ``{beta >= 0, sum(beta) = 1, |gamma - sigma @ beta|_inf <= slack}``.
LPs are solved by a dense two-phase simplex with Bland's rule; among several
optimal vertices the one reached by the deterministic pivot order is returned,
so callers should rely on optimal values rather than on argpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drosc import _kernels

FEAS_TOL = _kernels.FEAS_TOL


class LpInfeasible(Exception):
    """The polytope (or LP feasible set) is empty."""


class LpFailure(RuntimeError):
    """Numerical breakdown: iteration bound hit or unbounded direction."""


@dataclass(frozen=True)
class UncertaintyPolytope:
    sigma: np.ndarray
    gamma: np.ndarray
    slack: float

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        gamma = np.asarray(self.gamma, dtype=float).ravel()
        if sigma.shape != (gamma.size, gamma.size):
            raise ValueError("sigma must be N x N with N = len(gamma)")
        if not self.slack >= 0:
            raise ValueError("slack must be non-negative")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "slack", float(self.slack))

    @property
    def n(self) -> int:
        return self.gamma.size

    def system(self):
        """Equality form (A, b) in the variables (beta, upper slacks, lower slacks)."""
        return _kernels.polytope_system(self.sigma, self.gamma, self.slack)

    def contains(self, beta, tol: float = 1e-8) -> bool:
        beta = np.asarray(beta, dtype=float)
        return bool(
            beta.min() >= -tol
            and abs(beta.sum() - 1.0) <= tol
            and np.abs(self.gamma - self.sigma @ beta).max() <= self.slack + tol
        )


@dataclass(frozen=True)
class LpSolution:
    value: float
    argpoint: np.ndarray
    dual: np.ndarray
    dual_value: float

    @property
    def duality_gap(self) -> float:
        return abs(self.value - self.dual_value)


def _raise_for(status: int):
    if status == _kernels.INFEASIBLE:
        raise LpInfeasible("uncertainty polytope is empty")
    if status == _kernels.UNBOUNDED:
        raise LpFailure("LP unbounded; should not happen on a bounded polytope")
    if status == _kernels.ITERATION_LIMIT:
        raise LpFailure("simplex iteration bound reached")


def solve_lp(A, b, c, *, max_iter: int | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """min c'x subject to A x = b, x >= 0. Returns (value, x, y) with y the row duals."""
    A = np.ascontiguousarray(A, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    if max_iter is None:
        max_iter = 50 * (A.shape[0] + A.shape[1])
    status, x, value, y = _kernels.solve_standard(A, b, c, max_iter)
    _raise_for(status)
    return float(value), x, y


def lp_optimize(poly: UncertaintyPolytope, objective, sense: str = "min") -> LpSolution:
    """Optimize objective'beta over the polytope. Raises LpInfeasible if empty."""
    c = np.asarray(objective, dtype=float).ravel()
    if c.size != poly.n:
        raise ValueError("objective length must equal N")
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    A, b = poly.system()
    sign = 1.0 if sense == "min" else -1.0
    full = np.zeros(A.shape[1])
    full[: poly.n] = sign * c
    N = poly.n
    value, x, y = solve_lp(A, b, full, max_iter=50 * (N + 2 * N + 1))
    beta = x[:N].copy()
    return LpSolution(
        value=float(c @ beta),
        argpoint=beta,
        dual=sign * y,
        dual_value=float(sign * (b @ y)),
    )


def optimize_range(poly: UncertaintyPolytope, objective):
    """(min, max, argmin, argmax) of objective'beta, sharing one phase-one pass."""
    c = np.ascontiguousarray(objective, dtype=float).ravel()
    status, lo, hi, blo, bhi = _kernels.range_kernel(poly.sigma, poly.gamma, poly.slack, c)
    _raise_for(status)
    if lo > hi:
        # singleton or near-singleton polytope: the two solves differ by rounding
        lo = hi = 0.5 * (lo + hi)
    return float(lo), float(hi), blo, bhi


def min_slack(sigma, gamma) -> float:
    """Smallest slack for which the polytope is non-empty."""
    status, value, _ = _kernels.min_slack_kernel(
        np.ascontiguousarray(sigma, dtype=float), np.ascontiguousarray(gamma, dtype=float)
    )
    _raise_for(status)
    return max(0.0, float(value))


def is_feasible(poly: UncertaintyPolytope) -> bool:
    """Phase-one test: True iff the polytope is non-empty within 1e-9."""
    A, b = poly.system()
    status, *_ = _kernels.phase_one(A, b, 50 * (A.shape[0] + A.shape[1]))
    if status == _kernels.ITERATION_LIMIT:
        raise LpFailure("phase one did not terminate")
    return status == _kernels.OPTIMAL


def simplex_cls(x_pre, y_pre, *, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """argmin over the simplex of mean((y - X beta)^2).

    Fully corrective active-set iterations: solve the equality-constrained
    least squares on the current support, step back to feasibility if any
    weight turns negative, and add the vertex with the most negative reduced
    gradient until the KKT conditions hold.
    """
    X = np.asarray(x_pre, dtype=float)
    y = np.asarray(y_pre, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size or X.shape[0] < 1:
        raise ValueError("x_pre must be T0 x N with T0 = len(y_pre) >= 1")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite input to simplex_cls")
    T0, N = X.shape
    if N == 1:
        return np.ones(1)
    G = X.T @ X / T0
    h = X.T @ y / T0
    scale = max(1.0, float(np.abs(G).max()), float(np.abs(h).max()))

    def grad(beta):
        return 2.0 * (G @ beta - h)

    # start from the best single donor
    vert = np.diag(G) - 2.0 * h
    beta = np.zeros(N)
    beta[int(np.argmin(vert))] = 1.0
    support = [int(np.argmin(vert))]

    for _ in range(max_iter):
        # corrective step on the current support
        while True:
            S = np.array(sorted(support))
            k = S.size
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = 2.0 * G[np.ix_(S, S)]
            K[:k, k] = 1.0
            K[k, :k] = 1.0
            rhs = np.concatenate([2.0 * h[S], [1.0]])
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0][:k]
            if sol.min() > tol:
                beta = np.zeros(N)
                beta[S] = sol
                break
            # move toward sol until the first weight hits zero, then drop it
            cur = beta[S]
            d = sol - cur
            neg = d < 0
            steps = np.where(neg, cur / np.where(neg, -d, 1.0), np.inf)
            t = min(1.0, float(steps.min()))
            cur = cur + t * d
            cur[cur < tol] = 0.0
            beta = np.zeros(N)
            beta[S] = cur
            beta /= beta.sum()
            support = [j for j in S if beta[j] > 0]
        g = grad(beta)
        nu = float(g[beta > 0].mean())
        j = int(np.argmin(g))
        if g[j] >= nu - 1e-12 * scale or j in support:
            break
        support.append(j)
    beta[beta < 0] = 0.0
    return beta / beta.sum()


def cls_objective(x_pre, y_pre, beta) -> float:
    r = np.asarray(y_pre, dtype=float) - np.asarray(x_pre, dtype=float) @ np.asarray(beta, dtype=float)
    return float(r @ r / r.size)
