"""Acceptance gates 1-11. Each test prints one PASS/FAIL line at the stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -s -q`` (about half an hour on one
core) or ``python3 tests/test_acceptance.py`` for the summary lines only.

Gates run with the literal inference defaults. Where a gate fails for a reason
that is analysed in the decisions ledger, a labelled non-gating diagnostic line
reports the same quantity with the eigenvalue screen off and the unrefined draw
set (``--no-psd-filter --unrefined``).
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import bisect, phi_erf  # noqa: E402
from oracles import grid_tau, vertex_optimum  # noqa: E402
from drosc.estimator import DroscConfig, estimate, tau_star_population  # noqa: E402
from drosc.infer import InferConfig, InferenceDegenerate, RhoMEscalationError, infer  # noqa: E402
from drosc.lpsolve import UncertaintyPolytope, lp_optimize, min_slack  # noqa: E402
from drosc.numerics import (  # noqa: E402
    cholesky_psd,
    min_eigenvalue,
    noncentral_chisq1_quantile,
    normal_quantile,
)
from drosc.panel import load_basque  # noqa: E402
from drosc.simlab import (  # noqa: E402
    DEFAULT_TAU_GRID,
    consistency_trend,
    lambda_oracle,
    population_moments,
    run_monte_carlo,
    setting,
)

pytestmark = pytest.mark.slow

LITERAL = InferConfig(m_draws=500)
RELAXED = replace(LITERAL, psd_filter=False, refined=False)
REPLICATES = 500
# S2 also carries tau_bar = 0.2 for the non-regularity gate
TAU_GRIDS = {"S1": DEFAULT_TAU_GRID, "S2": tuple(sorted(DEFAULT_TAU_GRID + (0.2,))), "S3": DEFAULT_TAU_GRID}
RECOVERY_TAU = {"S1": -1.5, "S2": -1.2, "S3": -1.0}


def report(k: int, ok: bool, detail: str, seconds: float, diagnostic: str | None = None) -> str:
    line = f"[criterion {k:2d}] {'PASS' if ok else 'FAIL'} ({seconds:.1f}s): {detail}"
    if diagnostic:
        line += f"\n[criterion {k:2d}]   diagnostic, non-gating (eigenvalue screen off, unrefined): {diagnostic}"
    return line


def _emit(capsys, line: str) -> None:
    if capsys is None:
        print(line, flush=True)
        return
    with capsys.disabled():
        print("\n" + line, flush=True)


def mc(name: str, relaxed: bool, feasible_prop: float = 0.10, replicates: int = REPLICATES):
    # shared by criteria 4, 5 and 10; positional key so defaults hit the same entry
    return _mc(name, relaxed, feasible_prop, replicates)


@lru_cache(maxsize=None)
def _mc(name, relaxed, feasible_prop, replicates):
    cfg = replace(RELAXED if relaxed else LITERAL, feasible_prop=feasible_prop)
    return run_monte_carlo(name, TAU_GRIDS[name], 25, 25, 0.0, replicates, cfg)


# ---------------------------------------------------------------------------
# individual criteria: each returns (ok, detail, diagnostic)
# ---------------------------------------------------------------------------


def criterion_1():
    try:
        panel = load_basque(15)
    except FileNotFoundError as exc:
        return False, f"bundled panel unavailable ({exc})", None
    est = estimate(panel, DroscConfig(lam=0.0))
    ok = abs(est.sc.tau_sc + 0.89) <= 0.02 and abs(est.tau_hat + 0.76) <= 0.02
    return ok, f"tau_sc={est.sc.tau_sc:.4f} (target -0.89), tau_hat={est.tau_hat:.4f} (target -0.76)", None


def criterion_2():
    try:
        panel = load_basque(15)
    except FileNotFoundError as exc:
        return False, f"bundled panel unavailable ({exc})", None
    grid = np.round(np.arange(0, 61) * 0.001, 3)
    taus, zero_in = [], []
    for lam in grid:
        cfg = replace(LITERAL, lam=float(lam))
        try:
            ci = infer(panel, cfg)
            zero_in.append(ci.contains(0.0))
            taus.append(ci.point_estimate)
        except (InferenceDegenerate, RhoMEscalationError):
            zero_in.append(False)
            taus.append(estimate(panel, DroscConfig(lam=float(lam))).tau_hat)
    taus = np.array(taus)
    mono = bool(np.all(np.diff(taus) >= -1e-12))
    zeros = np.nonzero(taus == 0.0)[0]
    first = float(grid[zeros[0]]) if zeros.size else math.nan
    ok = mono and abs(first - 0.054) <= 0.002 and all(zero_in)
    return ok, f"monotone={mono}, first zero at lambda={first}, CIs containing 0: {sum(zero_in)}/{len(grid)}", None


def criterion_3():
    targets = (("S2", -1.0, -0.60), ("S2", 0.2, 0.05), ("S3", 0.9, 0.84))
    got = []
    for name, tb, _ in targets:
        dgp = setting(name, 10, tb)
        got.append(tau_star_population(*population_moments(dgp), lambda_oracle(dgp))[0])
    ok = all(abs(g - t) <= 0.02 for g, (_, _, t) in zip(got, targets))
    detail = ", ".join(f"{n}({tb:+.1f})->{g:.4f} (target {t:+.2f})" for g, (n, tb, t) in zip(got, targets))
    return ok, detail, None


def _coverage_summary(relaxed: bool):
    out = {}
    for name in ("S1", "S2", "S3"):
        rep = mc(name, relaxed)
        groups = rep.groups()
        out[name] = (min(g["coverage"] for g in groups), max(g["mean_union_length"] for g in groups),
                     sum(r.empty_sets for r in rep.rows), sum(r.replicates for r in rep.rows))
    return out


def criterion_4():
    lit = _coverage_summary(False)
    ok = all(v[0] >= 0.93 for v in lit.values())
    detail = "; ".join(f"{k}: min coverage {v[0]:.3f}, max length {v[1]:.3f}, empty sets {v[2]}/{v[3]}"
                       for k, v in lit.items())
    rel = _coverage_summary(True)
    diag = "; ".join(f"{k}: min coverage {v[0]:.3f}, max length {v[1]:.3f}" for k, v in rel.items())
    return ok, detail, diag


def _s2_nonregular(relaxed: bool):
    row = next(r for r in mc("S2", relaxed).rows if abs(r.tau_bar - 0.2) < 1e-12)
    return row.normality_coverage, row.coverage, row.tau_star


def criterion_5():
    norm, prop, ts = _s2_nonregular(False)
    ok = norm < 0.93 and prop >= 0.93
    detail = f"S2(0.2), tau*={ts:.4f}: Normality coverage {norm:.3f} (< 0.93 wanted), proposed {prop:.3f} (>= 0.93 wanted)"
    n2, p2, _ = _s2_nonregular(True)
    return ok, detail, f"Normality {n2:.3f}, proposed {p2:.3f}"


def _lp_grid_value(sigma, gamma, slack, c, sense):
    if c.size == 1:
        return float(c[0])
    # N = 2: beta = (1 - t, t) on a 1e-5 grid
    t = np.linspace(0.0, 1.0, 100_001)
    betas = np.stack([1 - t, t], axis=1)
    ok = np.abs(gamma - betas @ sigma.T).max(axis=1) <= slack
    vals = betas[ok] @ c
    return float(vals.min() if sense == "min" else vals.max())


def criterion_6():
    rng = np.random.default_rng(6)
    sizes = [1] * 150 + [2] * 400 + [3] * 400 + [4] * 50
    worst_tau = worst_lp = 0.0
    for n in sizes:
        B = rng.normal(size=(n, n))
        sigma = B @ B.T / n + 0.5 * np.eye(n)
        gamma = sigma @ rng.dirichlet(np.ones(n)) + rng.normal(0, 0.1, n)
        slack = min_slack(sigma, gamma) + float(rng.uniform(0.05, 0.5))
        mu = rng.uniform(0, 1, n)
        mu_y = float(mu @ rng.dirichlet(np.ones(n)) + rng.normal(0, 0.3))
        tau, _ = tau_star_population(sigma, gamma, mu_y, mu, slack)
        count, grid, _, _ = grid_tau(sigma, gamma, slack, mu, mu_y, 1000)
        worst_tau = max(worst_tau, abs(tau - grid) if count else math.inf)
        c = rng.normal(size=n)
        sense = "min" if rng.random() < 0.5 else "max"
        lp = lp_optimize(UncertaintyPolytope(sigma, gamma, slack), c, sense).value
        ref = _lp_grid_value(sigma, gamma, slack, c, sense) if n <= 2 else vertex_optimum(sigma, gamma, slack, c, sense)
        worst_lp = max(worst_lp, abs(lp - ref))
    ok = worst_tau <= 2e-3 and worst_lp <= 1e-4
    return ok, f"1000 instances: max |tau - grid| = {worst_tau:.2e} (<= 2e-3), max LP value error = {worst_lp:.2e} (<= 1e-4)", None


def criterion_7():
    rng = np.random.default_rng(7)
    sign_bad = mag_bad = 0
    worst = -math.inf
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        B = rng.normal(size=(n, n))
        sigma = B @ B.T / n + float(rng.uniform(0.05, 1.0)) * np.eye(n)
        beta0 = rng.dirichlet(np.ones(n))
        beta1 = rng.dirichlet(np.ones(n)) if rng.random() < 0.5 else beta0.copy()
        lam = float(np.abs(sigma @ (beta1 - beta0)).max() * rng.uniform(1.0, 2.0))
        mu = rng.uniform(-1, 2, n)
        tau_bar = float(rng.normal(0, 1))
        tau, _ = tau_star_population(sigma, sigma @ beta0, mu @ beta1 + tau_bar, mu, lam)
        # exact in real arithmetic; 1e-12 absorbs rounding when tau* = tau_bar
        sign_bad += tau * tau_bar < 0 and abs(tau) > 1e-12
        mag_bad += abs(tau) > abs(tau_bar) + 1e-12
        bound = 2 / min_eigenvalue(sigma) * np.abs(mu).sum() * math.sqrt(n) * lam
        worst = max(worst, abs(tau - tau_bar) - bound)
    ok = sign_bad == 0 and mag_bad == 0 and worst <= 1e-9
    return ok, f"1000 instances: opposite signs {sign_bad}, |tau*| > |tau_bar| + 1e-12 {mag_bad}, worst bound excess {worst:.2e} (<= 1e-9)", None


def criterion_8():
    trend = consistency_trend("S2", sizes=(25, 100, 400), replicates=200)
    errs = [e for _, e in trend]
    ok = errs[0] > errs[1] > errs[2]
    return ok, "median |tau_hat - tau*|: " + ", ".join(f"T={s}: {e:.4f}" for s, e in trend), None


def _recovery(relaxed: bool):
    out = {}
    for name, tb in RECOVERY_TAU.items():
        cfg = RELAXED if relaxed else LITERAL
        row = run_monte_carlo(name, [tb], 25, 25, 0.0, 100, cfg, seed=9).rows[0]
        out[name] = (row.mean_min_draw_fit_err, row.mean_point_fit_err)
    return out


def _recovery_text(name, d, p):
    draw = "no kept draws" if math.isnan(d) else f"{d:.4f}"
    return f"{name}: best draw {draw} vs 0.5 x point {0.5 * p:.4f}"


def criterion_9():
    lit = _recovery(False)
    ok = all(d <= 0.5 * p for d, p in lit.values())  # NaN (no kept draws) fails
    detail = "; ".join(_recovery_text(k, d, p) for k, (d, p) in lit.items())
    rel = _recovery(True)
    diag = "; ".join(_recovery_text(k, d, p) for k, (d, p) in rel.items())
    return ok, detail, diag


def _tuning(relaxed: bool):
    reps = [mc("S3", relaxed, fp) for fp in (0.10, 0.20, 0.30)]
    base = reps[0].rows
    dcov = dlen = 0.0
    empty = 0
    for rep in reps:
        for r0, r in zip(base, rep.rows):
            dcov = max(dcov, abs(r.coverage - r0.coverage))
            if r0.mean_union_length > 0:
                dlen = max(dlen, abs(r.mean_union_length / r0.mean_union_length - 1))
            else:
                dlen = math.inf if r.mean_union_length > 0 else dlen
            empty += r.empty_sets
    total = sum(r.replicates for rep in reps for r in rep.rows)
    return dcov, dlen, empty, total


def criterion_10():
    dcov, dlen, empty, total = _tuning(False)
    # unchanged-because-always-empty is not evidence of stability
    non_vacuous = empty <= 0.1 * total
    ok = non_vacuous and dcov <= 0.02 and dlen <= 0.10
    detail = f"max coverage change {dcov:.3f} (<= 0.02), max length change {dlen:.1%} (<= 10%), empty sets {empty}/{total}"
    d2, l2, e2, t2 = _tuning(True)
    return ok, detail, f"max coverage change {d2:.3f}, max length change {l2:.1%}, empty sets {e2}/{t2}"


def _charpoly_min_root(A):
    n = A.shape[0]
    bound = np.abs(A).sum(axis=1).max() + 1.0
    f = lambda x: np.linalg.det(A - x * np.eye(n))  # noqa: E731
    xs = np.linspace(-bound, bound, 20001)
    vals = np.array([f(x) for x in xs])
    k = int(np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0][0])
    return bisect(f, xs[k], xs[k + 1], tol=1e-14)


def criterion_11():
    rng = np.random.default_rng(11)
    qs = np.linspace(0.001, 0.999, 50)
    qerr = max(abs(normal_quantile(q) - bisect(lambda x: (1 - phi_erf(x)) - q, -10, 10)) for q in qs)
    cerr = abs(noncentral_chisq1_quantile(0.95, 0.0) - normal_quantile(0.025) ** 2)
    chol = 0.0
    for _ in range(20):
        B = rng.normal(size=(8, 8))
        A = B @ B.T
        L = cholesky_psd(A)
        chol = max(chol, float(np.abs(L @ L.T - A).max()))
    eig = 0.0
    for _ in range(10):
        B = rng.normal(size=(6, 6))
        A = 0.5 * (B + B.T)
        eig = max(eig, abs(min_eigenvalue(A) - _charpoly_min_root(A)))
    ok = qerr <= 1e-8 and cerr <= 1e-6 and chol <= 1e-8 and eig <= 1e-7
    return ok, f"quantile {qerr:.1e}, chi2(ncp=0) {cerr:.1e}, Cholesky {chol:.1e}, min-eigenvalue {eig:.1e}", None


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 12)}


def run_criterion(k: int, capsys=None) -> bool:
    start = time.perf_counter()
    ok, detail, diag = CRITERIA[k]()
    _emit(capsys, report(k, ok, detail, time.perf_counter() - start, diag))
    return ok


@pytest.mark.parametrize("k", list(range(1, 12)))
def test_criterion(k, capsys):
    assert run_criterion(k, capsys), f"criterion {k} not met (see the printed line)"


if __name__ == "__main__":
    results = [run_criterion(k) for k in range(1, 12)]
    print(f"{sum(results)}/11 criteria met")
