"""Simulation designs, benchmark intervals and Monte Carlo aggregation."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from drosc.estimator import DroscConfig, EstimationInfeasible, estimate, tau_star_population
from drosc.infer import InferConfig, InferenceDegenerate, RhoMEscalationError, infer_from_moments
from drosc.lpsolve import LpFailure, simplex_cls
from drosc.moments import covariances
from drosc.numerics import RngStream, cholesky_psd, noncentral_chisq1_quantile, normal_quantile
from drosc.panel import PanelData, split
from drosc.sc import fit_sc

logger = logging.getLogger(__name__)

SETTINGS = ("S1", "S2", "S3")
DEFAULT_TAU_GRID = (-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)


@dataclass(frozen=True)
class DgpConfig:
    t0: int
    t1: int
    n: int
    mu0: np.ndarray
    mu: np.ndarray
    rho0: float
    beta0: np.ndarray
    beta1: np.ndarray
    tau_bar: float = 0.0
    phi: float = 0.0
    sd_u0: float = 1.0
    sd_u1: float = 1.0
    sd_v: float = 0.25
    name: str = ""

    def __post_init__(self):
        for key in ("mu0", "mu", "beta0", "beta1"):
            v = np.asarray(getattr(self, key), dtype=float)
            if v.shape != (self.n,):
                raise ValueError(f"{key} must have length n={self.n}")
            object.__setattr__(self, key, v)
        for key in ("beta0", "beta1"):
            b = getattr(self, key)
            if b.min() < -1e-12 or abs(b.sum() - 1.0) > 1e-12:
                raise ValueError(f"{key} must lie in the simplex")
        if not 0 <= self.rho0 < 1:
            raise ValueError("rho0 must lie in [0, 1)")
        if not 0 <= self.phi < 1:
            raise ValueError("phi must lie in [0, 1)")
        if self.t0 < 1 or self.t1 < 1:
            raise ValueError("t0 and t1 must be positive")

    @property
    def sigma0(self) -> np.ndarray:
        return (1.0 - self.rho0) * np.eye(self.n) + self.rho0 * np.ones((self.n, self.n))

    def with_sizes(self, t0: int, t1: int) -> "DgpConfig":
        return replace(self, t0=t0, t1=t1)


def setting(name: str, n: int = 10, tau_bar: float = 0.0, *, t0: int = 25, t1: int = 25, phi: float = 0.0) -> DgpConfig:
    """The three simulation designs. S2 keeps the S1 pre-period means."""
    name = name.upper()
    if name not in SETTINGS:
        raise ValueError(f"unknown setting {name!r}; choose from S1|S2|S3")
    if n < (6 if name == "S3" else 3):
        raise ValueError(f"setting {name} needs a larger n (got {n})")
    beta0 = np.zeros(n)
    beta0[:3] = 1.0 / 3.0
    alt = np.where(np.arange(n) % 2 == 0, 0.8, 1.2)
    if name == "S1":
        mu0, mu, rho0, beta1 = alt, alt.copy(), 0.25, beta0.copy()
    elif name == "S2":
        shift = np.zeros(n)
        shift[:3] = (0.6, 0.4, 0.2)
        d = np.zeros(n)
        d[0], d[-1] = -1.0, 1.0
        mu0, mu, rho0, beta1 = alt, alt + shift, 0.95, beta0 + 0.05 * d
    else:
        base = 1.0 + np.arange(1, n + 1) / n
        d = np.zeros(n)
        d[:3], d[-3:] = -1.0, 1.0
        mu0, mu, rho0, beta1 = base, base.copy(), 0.25, beta0 + 0.2 * d
    return DgpConfig(t0=t0, t1=t1, n=n, mu0=mu0, mu=mu, rho0=rho0, beta0=beta0, beta1=beta1,
                     tau_bar=tau_bar, phi=phi, name=name)


def population_sigma(dgp: DgpConfig) -> np.ndarray:
    return dgp.sigma0 + np.outer(dgp.mu0, dgp.mu0)


def lambda_oracle(dgp: DgpConfig) -> float:
    return float(np.abs(population_sigma(dgp) @ (dgp.beta1 - dgp.beta0)).max())


def population_moments(dgp: DgpConfig):
    """(Sigma, gamma, mu_Y, mu) of the data-generating process."""
    sigma = population_sigma(dgp)
    return sigma, sigma @ dgp.beta0, float(dgp.mu @ dgp.beta1 + dgp.tau_bar), dgp.mu.copy()


def tau_star_oracle(dgp: DgpConfig, lam: float | None = None) -> float:
    lam = lambda_oracle(dgp) if lam is None else lam
    return tau_star_population(*population_moments(dgp), lam)[0]


def _ar1(gen, T: int, mean, chol, phi: float) -> np.ndarray:
    n = mean.size
    e = gen.standard_normal((T, n)) @ chol.T
    out = np.empty((T, n))
    out[0] = e[0]
    scale = math.sqrt(1.0 - phi * phi)
    for t in range(1, T):
        out[t] = phi * out[t - 1] + scale * e[t]
    return out + mean


def gen_panel(dgp: DgpConfig, rng) -> PanelData:
    """Stationary AR(1) controls (pre law N(mu0, Sigma0), post law N(mu, I)) and
    the linear treated outcome with effect tau_bar + v_t after t0."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    x_pre = _ar1(gen, dgp.t0, dgp.mu0, cholesky_psd(dgp.sigma0), dgp.phi)
    x_post = _ar1(gen, dgp.t1, dgp.mu, np.eye(dgp.n), dgp.phi)
    u_pre = gen.standard_normal(dgp.t0)
    u_post = gen.standard_normal(dgp.t1)
    v = gen.standard_normal(dgp.t1)
    y_pre = x_pre @ dgp.beta0 + dgp.sd_u0 * u_pre
    y_post = x_post @ dgp.beta1 + dgp.sd_u1 * u_post + dgp.tau_bar + dgp.sd_v * v
    return PanelData(np.concatenate([y_pre, y_post]), np.vstack([x_pre, x_post]), dgp.t0)


# ---------------------------------------------------------------------------
# benchmark intervals
# ---------------------------------------------------------------------------


def _se(tau_hats) -> float:
    t = np.asarray(tau_hats, dtype=float)
    if t.size < 2:
        raise ValueError("need at least 2 replicates")
    return float(t.std(ddof=1))


def normality_ci(tau_hats, tau_hat_r: float, alpha: float = 0.05) -> tuple[float, float]:
    """tau_hat_r +/- z_{alpha/2} * SE, SE the spread of tau_hat across replicates."""
    h = normal_quantile(alpha / 2) * _se(tau_hats)
    return tau_hat_r - h, tau_hat_r + h


def oba_half_width(se: float, bias: float, alpha: float = 0.05) -> float:
    if se <= 0:
        raise ValueError("SE must be positive")
    return se * math.sqrt(noncentral_chisq1_quantile(1.0 - alpha, (bias / se) ** 2))


def oba_ci(tau_hats, tau_hat_r: float, tau_star: float, alpha: float = 0.05) -> tuple[float, float]:
    """Bias-aware interval with the oracle bias |mean(tau_hat) - tau*|."""
    t = np.asarray(tau_hats, dtype=float)
    h = oba_half_width(_se(t), abs(t.mean() - tau_star), alpha)
    return tau_hat_r - h, tau_hat_r + h


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class ReplicateResult:
    tau_hat: float
    tau_sc: float
    covered: bool
    measure: float
    hull_length: float
    point_fit_err: float
    draw_fit_err: float
    ok: bool = True
    ci_ok: bool = True


def run_replicate(dgp: DgpConfig, lam: float, cfg: InferConfig, stream: RngStream, tau_star: float,
                  fit_star: float) -> ReplicateResult:
    """One panel: estimate, perturbation CI, and fit errors against mu'beta*."""
    gen = stream.generator()
    panel = gen_panel(dgp, gen)
    try:
        est = estimate(panel, DroscConfig(lam=lam))
    except (EstimationInfeasible, LpFailure) as exc:
        logger.warning("estimation failed: %s", exc)
        return ReplicateResult(math.nan, math.nan, False, 0.0, 0.0, math.nan, math.nan, ok=False, ci_ok=False)
    mom = est.moments
    point_err = abs(mom.mu_y_hat - est.tau_hat - fit_star)
    try:
        ci = infer_from_moments(mom, covariances(panel, cfg.cov_mode), cfg, gen, point_estimate=est.tau_hat)
    except (InferenceDegenerate, RhoMEscalationError, LpFailure) as exc:
        # an empty confidence set never covers
        logger.info("inference failed: %s", exc)
        return ReplicateResult(est.tau_hat, est.sc.tau_sc, False, 0.0, 0.0, point_err, math.nan, ci_ok=False)
    fits = ci.draw_fit[~np.isnan(ci.draw_fit)]
    draw_err = float(np.abs(fits - fit_star).min()) if fits.size else math.nan
    return ReplicateResult(
        tau_hat=est.tau_hat,
        tau_sc=est.sc.tau_sc,
        covered=ci.contains(tau_star),
        measure=ci.total_measure,
        hull_length=ci.hull[1] - ci.hull[0],
        point_fit_err=point_err,
        draw_fit_err=draw_err,
    )


@dataclass
class McRow:
    setting: str
    tau_bar: float
    tau_star: float
    lam: float
    replicates: int
    failures: int
    empty_sets: int
    coverage: float
    mean_union_length: float
    mean_hull_length: float
    mean_tau_hat: float
    mean_bias: float
    sc_mean_bias: float
    normality_coverage: float
    normality_length: float
    oba_coverage: float
    oba_length: float
    mean_point_fit_err: float
    mean_min_draw_fit_err: float
    seconds: float


@dataclass
class McReport:
    rows: list[McRow]
    config: dict = field(default_factory=dict)

    def groups(self, tol: float = 1e-9) -> list[dict]:
        """Rows sharing tau* (within tol): minimum coverage and maximum mean length."""
        out: list[dict] = []
        for row in sorted(self.rows, key=lambda r: (r.setting, r.tau_star)):
            g = out[-1] if out and out[-1]["setting"] == row.setting and abs(out[-1]["tau_star"] - row.tau_star) <= tol else None
            if g is None:
                g = {"setting": row.setting, "tau_star": row.tau_star, "tau_bars": [], "coverage": 1.0,
                     "mean_union_length": 0.0, "normality_coverage": 1.0, "oba_coverage": 1.0}
                out.append(g)
            g["tau_bars"].append(row.tau_bar)
            g["coverage"] = min(g["coverage"], row.coverage)
            g["normality_coverage"] = min(g["normality_coverage"], row.normality_coverage)
            g["oba_coverage"] = min(g["oba_coverage"], row.oba_coverage)
            g["mean_union_length"] = max(g["mean_union_length"], row.mean_union_length)
        return out

    def min_coverage(self) -> float:
        return min(g["coverage"] for g in self.groups())

    def to_csv(self, path) -> None:
        names = list(McRow.__dataclass_fields__)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in self.rows:
                w.writerow([getattr(row, k) for k in names])

    def to_dict(self) -> dict:
        return {"config": self.config, "rows": [asdict(r) for r in self.rows], "groups": self.groups()}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(_json_safe(self.to_dict()), indent=2), encoding="utf-8")

    def summary(self) -> str:
        head = f"{'setting':>7} {'tau_bar':>8} {'tau*':>8} {'cover':>6} {'length':>7} {'norm':>6} {'oba':>6} {'bias':>8}"
        lines = [head]
        for r in self.rows:
            lines.append(
                f"{r.setting:>7} {r.tau_bar:8.3f} {r.tau_star:8.4f} {r.coverage:6.3f} {r.mean_union_length:7.3f} "
                f"{r.normality_coverage:6.3f} {r.oba_coverage:6.3f} {r.mean_bias:8.4f}"
            )
        return "\n".join(lines)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _nanmean(a) -> float:
    a = np.asarray(a, dtype=float)
    a = a[~np.isnan(a)]
    return float(a.mean()) if a.size else math.nan


def summarize(dgp: DgpConfig, lam: float, tau_star: float, results: list[ReplicateResult], alpha: float,
              seconds: float = 0.0) -> McRow:
    ok = [r for r in results if r.ok]
    taus = np.array([r.tau_hat for r in ok])
    norm_cov = oba_cov = norm_len = oba_len = math.nan
    if taus.size >= 2:
        se = taus.std(ddof=1)
        h_norm = normal_quantile(alpha / 2) * se
        norm_cov = float(np.mean(np.abs(taus - tau_star) <= h_norm))
        norm_len = 2 * h_norm
        if se > 0:
            h_oba = oba_half_width(se, abs(taus.mean() - tau_star), alpha)
            oba_cov = float(np.mean(np.abs(taus - tau_star) <= h_oba))
            oba_len = 2 * h_oba
    return McRow(
        setting=dgp.name,
        tau_bar=dgp.tau_bar,
        tau_star=tau_star,
        lam=lam,
        replicates=len(results),
        failures=len(results) - len(ok),
        empty_sets=sum(not r.ci_ok for r in results),
        coverage=float(np.mean([r.covered for r in results])),
        mean_union_length=float(np.mean([r.measure for r in results])),
        mean_hull_length=float(np.mean([r.hull_length for r in results])),
        mean_tau_hat=_nanmean(taus),
        mean_bias=_nanmean(taus) - tau_star,
        sc_mean_bias=_nanmean([r.tau_sc for r in ok]) - dgp.tau_bar,
        normality_coverage=norm_cov,
        normality_length=norm_len,
        oba_coverage=oba_cov,
        oba_length=oba_len,
        mean_point_fit_err=_nanmean([r.point_fit_err for r in ok]),
        mean_min_draw_fit_err=_nanmean([r.draw_fit_err for r in ok]),
        seconds=seconds,
    )


def run_monte_carlo(
    setting_name: str,
    tau_bars=DEFAULT_TAU_GRID,
    t0: int = 25,
    t1: int = 25,
    phi: float = 0.0,
    replicates: int = 500,
    infer_cfg: InferConfig | None = None,
    *,
    n: int = 10,
    seed: int = 0,
    threads: int = 1,
    dgp_overrides: dict | None = None,
    progress=None,
) -> McReport:
    """Coverage study over a tau_bar grid. Replicate r draws from RngStream(seed, r),
    so rows for different tau_bar share random numbers and results do not depend
    on ``threads``."""
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    cfg = infer_cfg or InferConfig()
    rows = []
    for tb in tau_bars:
        dgp = setting(setting_name, n, tb, t0=t0, t1=t1, phi=phi)
        if dgp_overrides:
            dgp = replace(dgp, **dgp_overrides)
        lam = lambda_oracle(dgp)
        rcfg = replace(cfg, lam=lam)
        tau_star = tau_star_oracle(dgp, lam)
        fit_star = population_moments(dgp)[2] - tau_star
        start = time.perf_counter()

        def one(r, dgp=dgp, lam=lam, rcfg=rcfg, tau_star=tau_star, fit_star=fit_star):
            return run_replicate(dgp, lam, rcfg, RngStream(seed, r), tau_star, fit_star)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one, range(replicates)))
        else:
            results = [one(r) for r in range(replicates)]
        row = summarize(dgp, lam, tau_star, results, cfg.alpha, time.perf_counter() - start)
        rows.append(row)
        if progress:
            progress(row)
    conf = {
        "setting": setting_name, "tau_bars": list(tau_bars), "t0": t0, "t1": t1, "phi": phi, "n": n,
        "replicates": replicates, "seed": seed, "infer": {k: v for k, v in asdict(cfg).items() if k != "lam"},
    }
    return McReport(rows, conf)


def consistency_trend(setting_name: str, sizes=(25, 100, 400), replicates: int = 200, tau_bar: float = -1.0,
                      *, n: int = 10, seed: int = 0) -> list[tuple[int, float]]:
    """Median |tau_hat - tau*| for T0 = T1 = size, estimation only."""
    out = []
    for size in sizes:
        dgp = setting(setting_name, n, tau_bar, t0=size, t1=size)
        lam = lambda_oracle(dgp)
        ts = tau_star_oracle(dgp, lam)
        errs = []
        for r in range(replicates):
            panel = gen_panel(dgp, RngStream(seed, r))
            errs.append(abs(estimate(panel, DroscConfig(lam=lam)).tau_hat - ts))
        out.append((size, float(np.median(errs))))
    return out


# ---------------------------------------------------------------------------
# semi-real experiments
# ---------------------------------------------------------------------------


def _pre_noise(panel: PanelData, c: float, gen):
    """Copy of the panel with N(0, (c * pre-period sd)^2) noise on every pre-period series."""
    pre, _ = split(panel)
    y = panel.y_treated.copy()
    x = panel.x_controls.copy()
    t0 = panel.t0
    sd_y = pre.y.std(ddof=1) if t0 > 1 else 0.0
    sd_x = pre.x.std(axis=0, ddof=1) if t0 > 1 else np.zeros(panel.N)
    y[:t0] += c * sd_y * gen.standard_normal(t0)
    x[:t0] += c * sd_x * gen.standard_normal((t0, panel.N))
    return y, x


def stability_experiment(panel: PanelData, noise_c: float, replicates: int = 100, *, seed: int = 0,
                         threshold: float = 1e-3) -> np.ndarray:
    """Share of noisy refits in which each control gets SC weight above threshold."""
    if noise_c < 0:
        raise ValueError("noise_c must be non-negative")
    counts = np.zeros(panel.N)
    for r in range(replicates):
        y, x = _pre_noise(panel, noise_c, RngStream(seed, r).generator())
        beta = simplex_cls(x[: panel.t0], y[: panel.t0])
        counts += beta > threshold
    return counts / replicates


WEIGHT_SHIFT_PAIRS = (("Baleares", "Cataluna"), ("Rioja", "Asturias"))
DEFAULT_KAPPAS = (0.05, 0.1, 0.2, 0.3, 0.4)


def shifted_weights(beta0, pairs_idx, kappa: float) -> np.ndarray:
    """Move a kappa share of each source unit's weight onto its paired unit."""
    beta1 = np.array(beta0, dtype=float)
    for src, dst in pairs_idx:
        moved = kappa * beta0[src]
        beta1[src] -= moved
        beta1[dst] += moved
    return beta1


def weight_shift_experiment(panel: PanelData, kappas=DEFAULT_KAPPAS, replicates: int = 200, *,
                            noise_c: float = 0.05, tau_bar: float = 0.0, pairs=WEIGHT_SHIFT_PAIRS,
                            seed: int = 0) -> list[dict]:
    """SC bias under a post-period weight shift on a semi-real panel.

    beta0 is the SC fit on the real panel. Each replicate keeps the real control
    paths plus small noise (sd = noise_c x series sd), builds the treated unit as
    X beta0 + u before t0 and X beta1 + u + tau_bar after, with beta1 shifting a
    kappa share of each source donor onto its partner, then refits SC.
    """
    idx = [(panel.unit_index(a), panel.unit_index(b)) for a, b in pairs]
    beta0 = fit_sc(panel).beta_sc
    t0 = panel.t0
    pre, _ = split(panel)
    sd_y = float(pre.y.std(ddof=1))
    sd_x = panel.x_controls[:t0].std(axis=0, ddof=1)
    rows = []
    for kappa in kappas:
        beta1 = shifted_weights(beta0, idx, kappa)
        taus = np.empty(replicates)
        for r in range(replicates):
            gen = RngStream(seed, r).generator()
            x = panel.x_controls + noise_c * sd_x * gen.standard_normal(panel.x_controls.shape)
            u = noise_c * sd_y * gen.standard_normal(panel.T)
            y = np.concatenate([x[:t0] @ beta0, x[t0:] @ beta1 + tau_bar]) + u
            taus[r] = fit_sc(panel.with_values(y, x)).tau_sc
        row = {
            "kappa": kappa,
            "mean_tau_sc": float(taus.mean()),
            "bias": float(taus.mean() - tau_bar),
            "se": float(taus.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else math.nan,
            "q05": float(np.quantile(taus, 0.05)),
            "q95": float(np.quantile(taus, 0.95)),
        }
        for src, dst in idx:
            row[f"w_{panel.unit_names[src]}"] = float(beta1[src])
            row[f"w_{panel.unit_names[dst]}"] = float(beta1[dst])
        rows.append(row)
    return rows
