"""Small dense numerics: PSD Cholesky, Jacobi eigenvalues, normal and noncentral
chi-square quantiles, and reproducible random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from drosc import _kernels


class CholeskyError(np.linalg.LinAlgError):
    """Raised when a matrix cannot be factorized even after jitter escalation."""

    def __init__(self, jitter: float):
        super().__init__(f"matrix not factorizable; last jitter tried {jitter:.3e}")
        self.jitter = jitter


def symmetrize(a) -> np.ndarray:
    """Copy the lower triangle onto the upper one so symmetry holds exactly."""
    a = np.array(a, dtype=float)
    return np.tril(a) + np.tril(a, -1).T


def max_abs(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.abs(a).max()) if a.size else 0.0


def cholesky_psd(a, jitter: float = 0.0, *, return_jitter: bool = False):
    """Lower-triangular L with L @ L.T == a (+ jitter * I when needed).

    Semidefinite inputs are accepted: a zero pivot whose column is already
    eliminated yields a zero column in L. If factorization fails, a diagonal
    jitter is added and multiplied by 10 at most three times.
    """
    a = symmetrize(a)
    n = a.shape[0]
    if n == 0:
        out = np.zeros((0, 0))
        return (out, 0.0) if return_jitter else out
    scale = max(1.0, max_abs(a))
    tol = 1e-14 * scale
    L, ok = _kernels.cholesky_psd_kernel(a, tol)
    used = 0.0
    if not ok:
        used = jitter if jitter > 0 else 1e-12 * scale
        for _ in range(4):
            L, ok = _kernels.cholesky_psd_kernel(a + used * np.eye(n), tol)
            if ok:
                break
            used *= 10.0
        else:
            raise CholeskyError(used / 10.0)
    return (L, used) if return_jitter else L


def min_eigenvalue(a) -> float:
    """Smallest eigenvalue of a symmetric matrix (cyclic Jacobi)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    return float(_kernels.min_eigenvalue_kernel(symmetrize(a)))


def eigenvalues(a) -> np.ndarray:
    return np.sort(_kernels.jacobi_eigenvalues(symmetrize(a)))


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

# Acklam's rational approximation to the inverse normal CDF
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _lower_tail_quantile(p: float) -> float:
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # one Halley step against the erfc-based CDF
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_quantile(q: float) -> float:
    """Upper-q quantile z_q of the standard normal, i.e. P(Z > z_q) = q."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if q == 0.5:
        return 0.0
    # work in the smaller tail so the Newton correction stays accurate
    if q < 0.5:
        return -_lower_tail_quantile(q)
    return _lower_tail_quantile(1.0 - q)


def _gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if x <= 0.0:
        return 0.0
    lg = math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        ap = a
        for _ in range(10_000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return total * math.exp(-x + a * math.log(x) - lg)
    # continued fraction for Q(a, x), modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return 1.0 - math.exp(-x + a * math.log(x) - lg) * h


def noncentral_chisq1_cdf(x: float, ncp: float) -> float:
    """CDF of the noncentral chi-square with one degree of freedom.

    Poisson(ncp/2) mixture of central chi-square CDFs with 1 + 2k degrees of
    freedom, truncated once the unused Poisson mass drops below 1e-14.
    """
    if x <= 0.0:
        return 0.0
    half = 0.5 * ncp
    if half == 0.0:
        return _gammainc_lower(0.5, 0.5 * x)
    total = 0.0
    used = 0.0
    k = 0
    log_w = -half
    while True:
        w = math.exp(log_w)
        total += w * _gammainc_lower(0.5 + k, 0.5 * x)
        used += w
        k += 1
        if 1.0 - used < 1e-14 and k > half:
            break
        if k > 100_000:
            break
        log_w += math.log(half) - math.log(k)
    return min(1.0, total)


def noncentral_chisq1_quantile(level: float, ncp: float) -> float:
    """x with CDF(x) == level for the one-dof noncentral chi-square, by bisection."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if ncp < 0:
        raise ValueError("ncp must be non-negative")
    lo, hi = 0.0, max(1.0, 2.0 * (1.0 + ncp))
    while noncentral_chisq1_cdf(hi, ncp) < level:
        lo, hi = hi, 2.0 * hi
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        f = noncentral_chisq1_cdf(mid, ncp) - level
        if abs(f) <= 1e-12 or hi - lo <= 1e-15 * max(1.0, hi):
            return mid
        if f < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Value-like handle on a reproducible PCG64 stream.

    ``generator()`` always starts the same sequence for a given (seed, stream);
    distinct stream ids are spawned children of one SeedSequence, so they are
    statistically independent. Normal variates come from numpy's ziggurat.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RngStream":
        # fold the parent stream into the seed so nested children stay distinct
        mixed = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=(self.stream,))
        return RngStream(int(mixed.generate_state(2, np.uint64)[0]), stream)


def sample_mvn(mean, chol_factor, rng, size: int | None = None) -> np.ndarray:
    """mean + L z with z standard normal; ``rng`` is an RngStream or a Generator."""
    mean = np.asarray(mean, dtype=float)
    L = np.asarray(chol_factor, dtype=float)
    if L.shape != (mean.size, mean.size):
        raise ValueError("factor and mean dimensions disagree")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if size is None:
        z = gen.standard_normal(mean.size)
        return mean + L @ z
    z = gen.standard_normal((size, mean.size))
    return mean + z @ L.T
