from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from drosc.infer import InferConfig
from drosc.numerics import RngStream, noncentral_chisq1_quantile
from drosc.panel import PanelData
from drosc.simlab import (
    DgpConfig,
    consistency_trend,
    gen_panel,
    lambda_oracle,
    normality_ci,
    oba_ci,
    oba_half_width,
    population_moments,
    run_monte_carlo,
    setting,
    shifted_weights,
    stability_experiment,
    tau_star_oracle,
    weight_shift_experiment,
)


def test_dgp_validation():
    s = setting("S1")
    with pytest.raises(ValueError):
        replace(s, beta0=np.full(10, 0.2))
    with pytest.raises(ValueError):
        replace(s, rho0=1.0)
    with pytest.raises(ValueError):
        setting("S3", n=5)
    with pytest.raises(ValueError):
        setting("S4")


def test_setting_vectors():
    s3 = setting("S3")
    assert np.allclose(s3.beta1, [0.4 / 3] * 3 + [0] * 4 + [0.2] * 3)
    assert s3.beta1.sum() == pytest.approx(1.0)
    s2 = setting("S2")
    assert s2.beta1[0] == pytest.approx(1 / 3 - 0.05) and s2.beta1[9] == pytest.approx(0.05)
    assert s2.rho0 == 0.95 and np.allclose(s2.mu - s2.mu0, [0.6, 0.4, 0.2] + [0] * 7)
    s1 = setting("S1")
    assert np.array_equal(s1.beta1, s1.beta0) and np.allclose(s1.mu0[:4], [0.8, 1.2, 0.8, 1.2])


def test_noiseless_post_period():
    dgp = replace(setting("S3", tau_bar=2.0, t0=30, t1=30), sd_u0=0.0, sd_u1=0.0, sd_v=0.0)
    p = gen_panel(dgp, RngStream(0))
    post = p.y_treated[30:] - p.x_controls[30:] @ dgp.beta1
    assert np.abs(post - 2.0).max() <= 1e-12


def test_pre_covariance_and_means():
    dgp = setting("S2", t0=100_000, t1=100_000)
    p = gen_panel(dgp, RngStream(1))
    xp = p.x_controls[:100_000]
    assert np.abs(np.cov(xp.T) - dgp.sigma0).max() <= 0.02
    assert np.all(np.abs(xp.mean(0) - dgp.mu0) <= 4 * np.sqrt(np.diag(dgp.sigma0) / 1e5))
    xq = p.x_controls[100_000:]
    assert np.all(np.abs(xq.mean(0) - dgp.mu) <= 4 / math.sqrt(1e5))


def test_ar1_autocorrelation():
    dgp = setting("S1", t0=100_000, t1=10, phi=0.5)
    x = gen_panel(dgp, RngStream(2)).x_controls[:100_000]
    xc = x - x.mean(0)
    ac = (xc[1:] * xc[:-1]).sum(0) / (xc**2).sum(0)
    assert np.all(np.abs(ac - 0.5) <= 0.02)


def test_lambda_oracle():
    assert lambda_oracle(setting("S1")) == 0.0
    n = 4
    unit = DgpConfig(t0=5, t1=5, n=n, mu0=np.zeros(n), mu=np.zeros(n), rho0=0.0,
                     beta0=np.array([0, 1.0, 0, 0]), beta1=np.array([1.0, 0, 0, 0]))
    assert lambda_oracle(unit) == pytest.approx(1.0)
    s2 = setting("S2")
    sigma = [[(1 - s2.rho0) * (i == j) + s2.rho0 + s2.mu0[i] * s2.mu0[j] for j in range(10)] for i in range(10)]
    d = [s2.beta1[j] - s2.beta0[j] for j in range(10)]
    naive = max(abs(sum(sigma[i][j] * d[j] for j in range(10))) for i in range(10))
    assert lambda_oracle(s2) == pytest.approx(naive, abs=1e-12)


def test_tau_star_examples():
    assert tau_star_oracle(setting("S1", tau_bar=-1.5)) == pytest.approx(-1.5, abs=1e-10)
    assert tau_star_oracle(setting("S2", tau_bar=0.2)) == pytest.approx(0.05, abs=0.01)
    assert tau_star_oracle(setting("S2", tau_bar=-1.0)) == pytest.approx(-0.60, abs=0.01)


def test_gamma_against_monte_carlo():
    dgp = setting("S1", t0=1_000_000, t1=2)
    p = gen_panel(dgp, RngStream(3))
    xp, yp = p.x_controls[:1_000_000], p.y_treated[:1_000_000]
    mc = xp.T @ yp / 1_000_000
    assert np.abs(mc - population_moments(dgp)[1]).max() <= 0.01


def test_normality_ci():
    assert normality_ci([0.3, 0.3, 0.3], 0.3) == (0.3, 0.3)
    t = np.array([-1.0, 1.0])  # sd = sqrt(2)
    lo, hi = normality_ci(t / math.sqrt(2), 0.0)
    assert hi == pytest.approx(1.959964, abs=1e-6) and lo == pytest.approx(-hi)
    a = normality_ci(t, 0.1)
    b = normality_ci(t + 5, 5.1)
    assert b[0] == pytest.approx(a[0] + 5) and b[1] == pytest.approx(a[1] + 5)
    with pytest.raises(ValueError):
        normality_ci([1.0], 1.0)


def test_oba_ci():
    t = np.array([-1.0, 1.0]) / math.sqrt(2)
    assert oba_ci(t, 0.0, 0.0) == pytest.approx(normality_ci(t, 0.0))
    assert oba_half_width(1.0, 2.0) == pytest.approx(math.sqrt(noncentral_chisq1_quantile(0.95, 4.0)))
    hs = [oba_half_width(1.0, b) for b in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert all(a < b for a, b in zip(hs, hs[1:]))
    with pytest.raises(ValueError):
        oba_half_width(0.0, 1.0)


def test_degenerate_monte_carlo():
    rep = run_monte_carlo("S1", [0.0], replicates=10, infer_cfg=InferConfig(m_draws=100),
                          dgp_overrides={"sd_u0": 0.0, "sd_u1": 0.0, "sd_v": 0.0})
    row = rep.rows[0]
    assert row.lam == 0.0 and row.replicates == 10
    assert 0.0 <= row.coverage <= 1.0
    assert abs(row.mean_tau_hat) <= 1e-6  # exact fit: tau_hat = 0 each replicate
    relaxed = InferConfig(m_draws=100, psd_filter=False, refined=False)
    rep2 = run_monte_carlo("S1", [0.0], replicates=10, infer_cfg=relaxed,
                           dgp_overrides={"sd_u0": 0.0, "sd_u1": 0.0, "sd_v": 0.0})
    assert rep2.rows[0].coverage == 1.0


def test_monte_carlo_thread_invariance():
    cfg = InferConfig(m_draws=60, psd_filter=False, refined=False)
    a = run_monte_carlo("S2", [-1.0, 0.2], replicates=6, infer_cfg=cfg, threads=1)
    b = run_monte_carlo("S2", [-1.0, 0.2], replicates=6, infer_cfg=cfg, threads=3)
    for ra, rb in zip(a.rows, b.rows):
        assert ra.coverage == rb.coverage and ra.mean_union_length == rb.mean_union_length
    assert len(a.groups()) == 2


def test_report_grouping(tmp_path):
    cfg = InferConfig(m_draws=40, psd_filter=False, refined=False)
    rep = run_monte_carlo("S1", [-1.0, -1.0], replicates=4, infer_cfg=cfg)
    g = rep.groups()
    assert len(g) == 1 and g[0]["tau_bars"] == [-1.0, -1.0]
    rep.to_csv(tmp_path / "r.csv")
    rep.to_json(tmp_path / "r.json")
    assert (tmp_path / "r.csv").read_text().count("\n") == 3


def test_s2_bias_centers_near_tau_star():
    cfg = InferConfig(m_draws=20, psd_filter=False, refined=False)
    row = run_monte_carlo("S2", [-1.0], replicates=40, infer_cfg=cfg).rows[0]
    assert abs(row.mean_tau_hat - row.tau_star) < abs(row.mean_tau_hat - (-1.0))


@pytest.mark.slow
def test_consistency_trend():
    trend = consistency_trend("S2", sizes=(25, 100, 400), replicates=200)
    errs = [e for _, e in trend]
    assert errs[0] > errs[1] > errs[2]


def _named_panel(rng, T=30, t0=20):
    names = ("Madrid", "Baleares", "Rioja", "Cataluna", "Asturias", "Other")
    t = np.arange(T)
    base = np.stack([1 + 0.02 * t * (j + 1) for j in range(6)], axis=1)
    base[:, 3] = base[:, 1] + 0.01 * t  # near-copies that drift apart
    base[:, 4] = base[:, 2] - 0.01 * t
    x = base + 0.01 * rng.normal(size=(T, 6))
    beta = np.array([0.5, 0.3, 0.2, 0, 0, 0])
    y = x @ beta + 0.005 * rng.normal(size=T)
    return PanelData(y, x, t0, names)


def test_stability_experiment(rng):
    p = _named_panel(rng)
    f0 = stability_experiment(p, 0.0, replicates=5)
    assert set(np.unique(f0)) <= {0.0, 1.0}
    f = stability_experiment(p, 0.1, replicates=30)
    assert np.all((f >= 0) & (f <= 1)) and f.sum() >= 1
    with pytest.raises(ValueError):
        stability_experiment(p, -0.1)


def test_shifted_weights():
    b = shifted_weights(np.array([0.483, 0.311, 0.206, 0, 0]), [(1, 3), (2, 4)], 0.2)
    assert b[3] == pytest.approx(0.2 * 0.311) and b[4] == pytest.approx(0.2 * 0.206)
    assert b.sum() == pytest.approx(1.0)


def test_weight_shift_experiment(rng):
    p = _named_panel(rng)
    rows = weight_shift_experiment(p, kappas=(0.0, 0.1, 0.2, 0.4), replicates=40, noise_c=0.01)
    assert abs(rows[0]["bias"]) <= 3 * rows[0]["se"] + 1e-3
    for a, b in zip(rows, rows[1:]):
        assert abs(b["bias"]) >= abs(a["bias"]) - max(a["se"], b["se"])
    assert "w_Cataluna" in rows[1]
    from drosc.panel import PanelError
    with pytest.raises(PanelError):
        weight_shift_experiment(p, pairs=(("Navarra", "Madrid"),), replicates=2)
