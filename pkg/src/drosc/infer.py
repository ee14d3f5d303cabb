"""Perturbation-based confidence sets for the weight-robust effect.

Each perturbation redraws the moments (Sigma, gamma, mu_Y, mu) from their
estimated sampling law, solves the perturbed max-min problem, and contributes
an interval around the perturbed effect. Draws whose standardized deviation is
too large or whose Sigma draw is indefinite are discarded; the confidence set
is the union of the remaining intervals.

Feasibility of a perturbed polytope at slack s is decided through the minimal
slack s_m = min_beta |gamma_m - Sigma_m beta|_inf (one LP per draw): the
polytope is non-empty iff s_m <= s. This turns the rho_M escalation and the
refined filter into comparisons instead of repeated phase-one solves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from drosc import _kernels
from drosc.estimator import DroscConfig, DroscEstimate, estimate
from drosc.moments import CovSet, MomentSet, covariances, inflate, total_dim, vecl, vecl_index
from drosc.numerics import RngStream, cholesky_psd, min_eigenvalue, normal_quantile
from drosc.panel import PanelData

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9


class InferenceDegenerate(RuntimeError):
    """No kept perturbation produced a non-empty interval."""


class RhoMEscalationError(RuntimeError):
    """Feasible share of perturbations never reached the target."""


@dataclass(frozen=True)
class InferConfig:
    m_draws: int = 500
    alpha: float = 0.05
    alpha0: float = 0.01
    lam: float = 0.0
    feasible_prop: float = 0.10
    rho_m_constant_init: float = 0.01
    rho_m_growth: float = 1.25
    filter_slack_factor: float = 1.1
    max_escalations: int = 60
    cov_mode: str = "iid"
    refined: bool = True
    psd_filter: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha0 <= 0.01:
            raise ValueError("alpha0 must lie in (0, 0.01]")
        if not self.alpha0 < self.alpha < 1:
            raise ValueError("alpha must lie in (alpha0, 1)")
        if not 0 < self.feasible_prop <= 1:
            raise ValueError("feasible_prop must lie in (0, 1]")
        if self.m_draws < 1:
            raise ValueError("m_draws must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.rho_m_growth <= 1:
            raise ValueError("rho_m_growth must exceed 1")
        if self.cov_mode not in ("iid", "hac"):
            raise ValueError("cov_mode must be iid or hac")


@dataclass(frozen=True)
class PerturbationDraw:
    sigma_m: np.ndarray
    gamma_m: np.ndarray
    mu_y_m: float
    mu_m: np.ndarray
    t_stat_inf: float = math.nan
    min_eig: float = math.nan
    tau_m: float | None = None
    kept: bool = False


@dataclass
class SamplingFactors:
    """Cholesky factors of the four (inflated) blocks; shared by sampling and whitening."""

    l_sigma: np.ndarray
    l_gamma: np.ndarray
    sd_y: float
    l_mu: np.ndarray

    @classmethod
    def from_cov(cls, cov: CovSet) -> "SamplingFactors":
        return cls(
            l_sigma=cholesky_psd(cov.v_sigma),
            l_gamma=cholesky_psd(cov.v_gamma),
            sd_y=math.sqrt(max(cov.v_y, 0.0)),
            l_mu=cholesky_psd(cov.v_mu),
        )


@dataclass
class PerturbationBatch:
    """M draws stored as stacked arrays. Row m of ``z`` holds the standard
    normals of draw m in the order (mu_Y, mu, vecl(Sigma), gamma)."""

    sigmas: np.ndarray
    gammas: np.ndarray
    mu_ys: np.ndarray
    mus: np.ndarray
    z: np.ndarray
    factors: SamplingFactors

    def __len__(self) -> int:
        return self.gammas.shape[0]

    def __getitem__(self, m: int) -> PerturbationDraw:
        return PerturbationDraw(self.sigmas[m], self.gammas[m], float(self.mu_ys[m]), self.mus[m])


def draw_perturbations(mom: MomentSet, cov: CovSet, m_draws: int, rng) -> PerturbationBatch:
    """Sample M perturbed moment sets. ``cov`` should already be inflated.

    ``rng`` is an RngStream or Generator; the whole M x p normal matrix is drawn
    in one call, so draw m is always row m whatever the worker layout.
    """
    n = mom.n
    p = total_dim(n)
    if cov.n != n:
        raise ValueError("covariance and moments disagree on N")
    fac = SamplingFactors.from_cov(cov)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    z = gen.standard_normal((m_draws, p))
    k = n * (n + 1) // 2
    zy, zmu, zs, zg = z[:, 0], z[:, 1 : 1 + n], z[:, 1 + n : 1 + n + k], z[:, 1 + n + k :]
    mu_ys = mom.mu_y_hat + fac.sd_y * zy
    mus = mom.mu_hat + zmu @ fac.l_mu.T
    gammas = mom.gamma_hat + zg @ fac.l_gamma.T
    low = vecl(mom.sigma_hat) + zs @ fac.l_sigma.T
    r, c = vecl_index(n)
    sigmas = np.empty((m_draws, n, n))
    sigmas[:, r, c] = low
    sigmas[:, c, r] = low
    return PerturbationBatch(sigmas, gammas, mu_ys, mus, z, fac)


def whiten(draw: PerturbationDraw, mom: MomentSet, factors: SamplingFactors) -> np.ndarray:
    """Solve L z = u blockwise with the sampling factors; returns z in stacking order."""
    n = mom.n
    sd = factors.sd_y
    zy = (draw.mu_y_m - mom.mu_y_hat) / sd if sd > 0 else 0.0
    blocks = [np.array([zy])]
    for L, dev in (
        (factors.l_mu, draw.mu_m - mom.mu_hat),
        (factors.l_sigma, vecl(draw.sigma_m) - vecl(mom.sigma_hat)),
        (factors.l_gamma, draw.gamma_m - mom.gamma_hat),
    ):
        blocks.append(_kernels.forward_solve_rows(L, np.ascontiguousarray(dev[None, :]))[0])
    out = np.concatenate(blocks)
    assert out.size == total_dim(n)
    return out


def filter_stats(draw: PerturbationDraw, mom: MomentSet, cov: CovSet | SamplingFactors):
    """(sup-norm of the whitened deviation, smallest eigenvalue of the Sigma draw)."""
    factors = cov if isinstance(cov, SamplingFactors) else SamplingFactors.from_cov(cov)
    if draw.gamma_m.size != mom.n or draw.sigma_m.shape != (mom.n, mom.n):
        raise ValueError("draw dimension does not match the moments")
    z = whiten(draw, mom, factors)
    return float(np.abs(z).max()), min_eigenvalue(draw.sigma_m)


def batch_filter_stats(batch: PerturbationBatch, mom: MomentSet):
    """filter_stats over a whole batch (triangular solves on stacked deviations)."""
    f = batch.factors
    n = mom.n
    k = n * (n + 1) // 2
    r, c = vecl_index(n)
    dev = [
        (batch.mu_ys - mom.mu_y_hat)[:, None],
        batch.mus - mom.mu_hat,
        batch.sigmas[:, r, c] - vecl(mom.sigma_hat),
        batch.gammas - mom.gamma_hat,
    ]
    zy = dev[0][:, 0] / f.sd_y if f.sd_y > 0 else np.zeros(len(batch))
    parts = [zy[:, None]]
    for L, d in ((f.l_mu, dev[1]), (f.l_sigma, dev[2]), (f.l_gamma, dev[3])):
        parts.append(_kernels.forward_solve_rows(L, np.ascontiguousarray(d)))
    z = np.hstack(parts)
    assert z.shape[1] == 1 + 2 * n + k
    t_inf = np.abs(z).max(axis=1)
    eigs = _kernels.batch_min_eigenvalue(np.ascontiguousarray(batch.sigmas))
    return t_inf, eigs


def filter_threshold(n: int, alpha0: float, factor: float = 1.1) -> float:
    p = total_dim(n)
    return factor * normal_quantile(alpha0 / (2 * p))


def min_slacks(batch: PerturbationBatch) -> np.ndarray:
    return _kernels.batch_min_slack(np.ascontiguousarray(batch.sigmas), np.ascontiguousarray(batch.gammas))


def rho_m_base(t0: int, t1: int, m_draws: int, n: int) -> float:
    """[log(min(T0, T1)) / M]^(1/p) / sqrt(T0), to be multiplied by C1."""
    p = total_dim(n)
    return (math.log(min(t0, t1)) / m_draws) ** (1.0 / p) / math.sqrt(t0)


def select_rho_m(draws, mom: MomentSet, lam: float, cfg: InferConfig, slacks=None):
    """Smallest C1 on the 1.25 ladder giving a feasible share >= feasible_prop.

    Returns (rho_m, escalations). ``slacks`` can pass precomputed min slacks.
    """
    if len(draws) == 0:
        raise ValueError("no perturbation draws")
    if slacks is None:
        if isinstance(draws, PerturbationBatch):
            slacks = min_slacks(draws)
        else:
            slacks = np.array([
                _kernels.min_slack_kernel(np.ascontiguousarray(d.sigma_m), np.ascontiguousarray(d.gamma_m))[1]
                for d in draws
            ])
    slacks = np.asarray(slacks)
    base = rho_m_base(mom.t0, mom.t1, len(draws), mom.n)
    c1 = cfg.rho_m_constant_init
    for esc in range(cfg.max_escalations + 1):
        rho_m = c1 * base
        share = float(np.mean(slacks <= lam + rho_m + FEAS_TOL))
        if share >= cfg.feasible_prop:
            return rho_m, esc
        c1 *= cfg.rho_m_growth
    raise RhoMEscalationError(
        f"feasible share {share:.3f} below {cfg.feasible_prop} after {cfg.max_escalations} escalations"
    )


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def perturbed_tau(draw: PerturbationDraw, mom: MomentSet, lam: float, rho_m: float) -> float | None:
    """tau_m = mu_Y_hat - clamp(mu_Y_m into the range of mu_m'beta); None if infeasible."""
    if rho_m < 0:
        raise ValueError("rho_m must be non-negative")
    status, lo, hi, _, _ = _kernels.range_kernel(
        np.ascontiguousarray(draw.sigma_m, dtype=float),
        np.ascontiguousarray(draw.gamma_m, dtype=float),
        lam + rho_m,
        np.ascontiguousarray(draw.mu_m, dtype=float),
    )
    if status != _kernels.OPTIMAL:
        return None
    return mom.mu_y_hat - _clamp(draw.mu_y_m, lo, hi)


def merge_intervals(intervals) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(a, b) for a, b in out]


@dataclass(frozen=True)
class CiResult:
    components: list[tuple[float, float]]
    hull: tuple[float, float]
    total_measure: float
    kept_count: int
    feasible_count: int
    refined_count: int
    rho_m_final: float
    point_estimate: float
    m_draws: int = 0
    rho_m_escalations: int = 0
    half_width: float = 0.0
    refined: bool = True
    # per-draw diagnostics (length M): perturbed effect and fitted mu_m'beta_m,
    # NaN outside the kept set or when infeasible
    draw_tau: np.ndarray = field(default=None, repr=False)
    draw_fit: np.ndarray = field(default=None, repr=False)
    in_kept: np.ndarray = field(default=None, repr=False)

    def contains(self, x: float) -> bool:
        return any(lo <= x <= hi for lo, hi in self.components)

    def to_dict(self) -> dict:
        return {
            "components": [[lo, hi] for lo, hi in self.components],
            "hull": list(self.hull),
            "total_measure": self.total_measure,
            "kept_count": self.kept_count,
            "feasible_count": self.feasible_count,
            "refined_count": self.refined_count,
            "rho_m_final": self.rho_m_final,
            "rho_m_escalations": self.rho_m_escalations,
            "half_width": self.half_width,
            "refined": self.refined,
            "m_draws": self.m_draws,
            "tau_hat": self.point_estimate,
        }


def build_ci(
    draws: PerturbationBatch,
    mom: MomentSet,
    cov: CovSet,
    cfg: InferConfig,
    rho_m: float,
    refined: bool | None = None,
    *,
    point_estimate: float = math.nan,
    stats=None,
    slacks=None,
    rho_m_escalations: int = 0,
) -> CiResult:
    """Union of per-draw intervals over the kept (optionally refined) draws.

    ``stats`` = (t_stat_inf, min_eig) arrays and ``slacks`` may be passed to
    avoid recomputation. ``cov`` supplies V_Y for the interval half-width.
    """
    refined = cfg.refined if refined is None else refined
    M = len(draws)
    if stats is None:
        stats = batch_filter_stats(draws, mom)
    t_inf, eigs = stats
    if slacks is None:
        slacks = min_slacks(draws)
    thr = filter_threshold(mom.n, cfg.alpha0, cfg.filter_slack_factor)
    kept = t_inf <= thr
    if cfg.psd_filter:
        kept &= eigs >= 0.0
    in_refined = kept & (slacks <= rho_m + FEAS_TOL)
    use = in_refined if refined else kept

    # ranges are computed over the whole kept set so diagnostics cover M
    active = kept & (slacks <= cfg.lam + rho_m + FEAS_TOL)
    lo, hi = _kernels.batch_range(
        np.ascontiguousarray(draws.sigmas),
        np.ascontiguousarray(draws.gammas),
        np.ascontiguousarray(draws.mus),
        cfg.lam + rho_m,
        active,
    )
    fit = np.where(np.isnan(lo), np.nan, np.clip(draws.mu_ys, lo, hi))
    tau = mom.mu_y_hat - fit
    half = normal_quantile((cfg.alpha - cfg.alpha0) / 2) * math.sqrt(max(cov.v_y, 0.0))

    centers = tau[use & ~np.isnan(tau)]
    if centers.size == 0:
        raise InferenceDegenerate(
            f"all {M} perturbations were filtered out or infeasible "
            f"(kept={int(kept.sum())}, refined={int(in_refined.sum())}); try a larger M or lambda"
        )
    comps = merge_intervals(zip(centers - half, centers + half))
    measure = float(sum(b - a for a, b in comps))
    return CiResult(
        components=comps,
        hull=(comps[0][0], comps[-1][1]),
        total_measure=measure,
        kept_count=int(kept.sum()),
        feasible_count=int(centers.size),
        refined_count=int(in_refined.sum()),
        rho_m_final=float(rho_m),
        point_estimate=float(point_estimate),
        m_draws=M,
        rho_m_escalations=rho_m_escalations,
        half_width=float(half),
        refined=refined,
        draw_tau=np.where(kept, tau, np.nan),
        draw_fit=np.where(kept, fit, np.nan),
        in_kept=kept,
    )


def infer_from_moments(mom: MomentSet, cov: CovSet, cfg: InferConfig, rng, point_estimate: float = math.nan) -> CiResult:
    """Algorithm core given moments and (uninflated) covariances."""
    big = inflate(cov)
    batch = draw_perturbations(mom, big, cfg.m_draws, rng)
    stats = batch_filter_stats(batch, mom)
    slacks = min_slacks(batch)
    rho_m, esc = select_rho_m(batch, mom, cfg.lam, cfg, slacks=slacks)
    logger.debug("rho_M=%.6g after %d escalations", rho_m, esc)
    return build_ci(
        batch, mom, cov, cfg, rho_m,
        point_estimate=point_estimate, stats=stats, slacks=slacks, rho_m_escalations=esc,
    )


def infer(panel: PanelData, cfg: InferConfig, est: DroscEstimate | None = None, rng=None) -> CiResult:
    """Point estimate plus perturbation confidence set for one panel."""
    if est is None:
        est = estimate(panel, DroscConfig(lam=cfg.lam))
    cov = covariances(panel, cfg.cov_mode)
    rng = RngStream(cfg.seed) if rng is None else rng
    return infer_from_moments(est.moments, cov, cfg, rng, point_estimate=est.tau_hat)
