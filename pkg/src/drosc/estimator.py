"""Weight-robust treatment effect estimation.

The max-min problem over the uncertainty polytope reduces to an interval and a
clamp: compute the range of mu'beta over the polytope with two LPs, map it to
the range of tau(beta) = mu_Y - mu'beta, and return the point of that range
closest to zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from drosc.lpsolve import LpFailure, LpInfeasible, UncertaintyPolytope, is_feasible, optimize_range, solve_lp
from drosc.moments import MomentSet, moment_set
from drosc.panel import PanelData, split
from drosc.sc import ScFit, fit_sc

logger = logging.getLogger(__name__)

POSITIVE = "positive-interval"
NEGATIVE = "negative-interval"
ZERO_INSIDE = "zero-inside"


class EstimationInfeasible(RuntimeError):
    """Uncertainty polytope stayed empty through every escalation of rho."""


@dataclass(frozen=True)
class DroscConfig:
    lam: float = 0.0
    rho_constant_init: float = 0.01
    rho_growth: float = 1.25
    log_exponent_a: float = 0.5
    max_escalations: int = 60

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if not self.rho_growth > 1:
            raise ValueError("rho_growth must exceed 1")
        if not self.rho_constant_init > 0:
            raise ValueError("rho_constant_init must be positive")
        if self.log_exponent_a < 0.5:
            raise ValueError("log_exponent_a must be at least 0.5")


@dataclass(frozen=True)
class DroscEstimate:
    tau_hat: float
    beta_hat: np.ndarray
    tau_interval: tuple[float, float]
    rho_final: float
    escalations: int
    case: str
    lam: float = 0.0
    sc: ScFit | None = field(default=None, repr=False)
    moments: MomentSet | None = field(default=None, repr=False)

    @property
    def slack(self) -> float:
        return self.lam + self.rho_final


def clamp_to_zero(lo: float, hi: float) -> float:
    if lo > hi:
        raise ValueError(f"empty interval: lo={lo} > hi={hi}")
    if lo > 0:
        return float(lo)
    if hi < 0:
        return float(hi)
    return 0.0


def clamp_case(lo: float, hi: float) -> str:
    if lo > 0:
        return POSITIVE
    if hi < 0:
        return NEGATIVE
    return ZERO_INSIDE


def max_rms(x_pre) -> float:
    """Largest root-mean-square pre-period outcome across control units."""
    x_pre = np.asarray(x_pre, dtype=float)
    return float(np.sqrt(np.mean(x_pre**2, axis=0)).max())


def rho_formula(sigma_resid: float, rms: float, lam: float, t0: int, n: int, c: float, a: float) -> float:
    return c * (sigma_resid * rms + lam) * math.log(max(t0, n)) ** a / math.sqrt(t0)


def rho_rule(panel: PanelData, sc: ScFit, lam: float, c: float, a: float = 0.5) -> float:
    if c <= 0:
        raise ValueError("c must be positive")
    if panel.t0 < 2:
        raise ValueError("rho rule needs t0 >= 2")
    pre, _ = split(panel)
    return rho_formula(sc.sigma_hat_resid, max_rms(pre.x), lam, panel.t0, panel.N, c, a)


def tau_range(mom_sigma, mom_gamma, mu_y: float, mu, slack: float):
    """(lo, hi) of mu_y - mu'beta over the polytope, plus the argpoints for lo and hi."""
    poly = UncertaintyPolytope(mom_sigma, mom_gamma, slack)
    lo_mu, hi_mu, arg_lo, arg_hi = optimize_range(poly, mu)
    # tau is decreasing in mu'beta: the smallest tau sits at the largest mu'beta
    return (mu_y - hi_mu, mu_y - lo_mu), arg_hi, arg_lo


def _zero_weight(sigma, gamma, slack: float, mu, mu_y: float) -> np.ndarray:
    """Some beta in the polytope with mu'beta = mu_y (exists in the zero-inside case)."""
    poly = UncertaintyPolytope(sigma, gamma, slack)
    A, b = poly.system()
    n = poly.n
    row = np.zeros(A.shape[1])
    row[:n] = mu
    A2 = np.vstack([A, row])
    b2 = np.append(b, mu_y)
    _, x, _ = solve_lp(A2, b2, np.zeros(A.shape[1]))
    return x[:n].copy()


def _finish(sigma, gamma, mu_y, mu, slack):
    (lo, hi), arg_at_lo, arg_at_hi = tau_range(sigma, gamma, mu_y, mu, slack)
    tau = clamp_to_zero(lo, hi)
    case = clamp_case(lo, hi)
    if case == POSITIVE:
        beta = arg_at_lo
    elif case == NEGATIVE:
        beta = arg_at_hi
    else:
        try:
            beta = _zero_weight(sigma, gamma, slack, mu, mu_y)
        except (LpInfeasible, LpFailure):
            # numerically at the boundary; take the endpoint closest to zero
            beta = arg_at_lo if abs(lo) <= abs(hi) else arg_at_hi
    return tau, (lo, hi), np.clip(beta, 0.0, None), case


def estimate(panel: PanelData, cfg: DroscConfig | None = None) -> DroscEstimate:
    cfg = cfg or DroscConfig()
    if panel.t0 < 2:
        raise ValueError("estimation needs t0 >= 2")
    mom = moment_set(panel)
    sc = fit_sc(panel)
    c = cfg.rho_constant_init
    rho = rho_rule(panel, sc, cfg.lam, c, cfg.log_exponent_a)
    escalations = 0
    while not is_feasible(UncertaintyPolytope(mom.sigma_hat, mom.gamma_hat, cfg.lam + rho)):
        if escalations >= cfg.max_escalations:
            raise EstimationInfeasible(
                f"uncertainty polytope empty after {escalations} escalations of rho (last rho={rho:.4g})"
            )
        c *= cfg.rho_growth
        escalations += 1
        rho = rho_rule(panel, sc, cfg.lam, c, cfg.log_exponent_a)
    logger.debug("rho=%.6g after %d escalations", rho, escalations)
    tau, interval, beta, case = _finish(mom.sigma_hat, mom.gamma_hat, mom.mu_y_hat, mom.mu_hat, cfg.lam + rho)
    return DroscEstimate(
        tau_hat=tau,
        beta_hat=beta,
        tau_interval=interval,
        rho_final=rho,
        escalations=escalations,
        case=case,
        lam=cfg.lam,
        sc=sc,
        moments=mom,
    )


def tau_star_population(sigma, gamma, mu_y: float, mu, lam: float):
    """Population estimand and its sensitivity interval (slack exactly lambda)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    (lo, hi), _, _ = tau_range(np.asarray(sigma, float), np.asarray(gamma, float), float(mu_y), np.asarray(mu, float), lam)
    return clamp_to_zero(lo, hi), (lo, hi)
