"""Pre/post moment estimators and the covariance blocks used for perturbation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from drosc.numerics import max_abs
from drosc.panel import PanelData, PanelView, split


def vecl_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the lower triangle stacked column by column:
    (0,0),(1,0),...,(n-1,0),(1,1),(2,1),..."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def vecl(a) -> np.ndarray:
    a = np.asarray(a)
    r, c = vecl_index(a.shape[0])
    return a[r, c]


def unvecl(v, n: int) -> np.ndarray:
    """Symmetric matrix whose lower triangle is v (upper copied from lower)."""
    r, c = vecl_index(n)
    out = np.zeros((n, n))
    out[r, c] = v
    out[c, r] = v
    return out


def total_dim(n: int) -> int:
    """p = 1 + N(N+5)/2: mu_Y, mu, vecl(Sigma), gamma."""
    return 1 + n * (n + 5) // 2


@dataclass(frozen=True)
class MomentSet:
    sigma_hat: np.ndarray
    gamma_hat: np.ndarray
    mu_y_hat: float
    mu_hat: np.ndarray
    t0: int
    t1: int

    @property
    def n(self) -> int:
        return self.gamma_hat.size


@dataclass(frozen=True)
class CovSet:
    v_sigma: np.ndarray
    v_gamma: np.ndarray
    v_y: float
    v_mu: np.ndarray
    inflated: tuple[bool, bool, bool] = (False, False, False)

    @property
    def n(self) -> int:
        return self.v_gamma.shape[0]

    @property
    def p(self) -> int:
        return 1 + self.v_mu.shape[0] + self.v_sigma.shape[0] + self.v_gamma.shape[0]


def pre_moments(pre: PanelView) -> tuple[np.ndarray, np.ndarray]:
    X, y = pre.x, pre.y
    t0 = y.size
    sigma = X.T @ X / t0
    sigma = 0.5 * (sigma + sigma.T)
    return sigma, X.T @ y / t0


def post_moments(post: PanelView) -> tuple[float, np.ndarray]:
    return float(post.y.mean()), post.x.mean(axis=0)


def moment_set(panel: PanelData) -> MomentSet:
    pre, post = split(panel)
    sigma, gamma = pre_moments(pre)
    mu_y, mu = post_moments(post)
    return MomentSet(sigma, gamma, mu_y, mu, panel.t0, panel.t1)


def _block_series(panel: PanelData):
    """Centered per-period series whose sample means are the four moments."""
    pre, post = split(panel)
    r, c = vecl_index(panel.N)
    outer = pre.x[:, r] * pre.x[:, c]
    xy = pre.x * pre.y[:, None]
    return (
        outer - outer.mean(axis=0),
        xy - xy.mean(axis=0),
        (post.y - post.y.mean())[:, None],
        post.x - post.x.mean(axis=0),
    )


def _long_run(z: np.ndarray, bandwidth: int) -> np.ndarray:
    """Bartlett-weighted long-run covariance of the sample mean, 1/(T(T-1)) scaling."""
    T = z.shape[0]
    out = z.T @ z
    for lag in range(1, bandwidth + 1):
        w = 1.0 - lag / (bandwidth + 1.0)
        g = z[lag:].T @ z[:-lag]
        out += w * (g + g.T)
    out /= T * (T - 1)
    return 0.5 * (out + out.T)


def covariances_iid(panel: PanelData) -> CovSet:
    if panel.t0 < 2 or panel.t1 < 2:
        raise ValueError("covariance estimation needs t0 >= 2 and t1 >= 2")
    zs, zg, zy, zm = _block_series(panel)
    return CovSet(
        v_sigma=_long_run(zs, 0),
        v_gamma=_long_run(zg, 0),
        v_y=float(_long_run(zy, 0)[0, 0]),
        v_mu=_long_run(zm, 0),
    )


def auto_bandwidth(T: int) -> int:
    return int(math.floor(4.0 * (T / 100.0) ** (2.0 / 9.0)))


def bartlett_weight(lag: int, bandwidth: int) -> float:
    return 1.0 - lag / (bandwidth + 1.0) if lag <= bandwidth else 0.0


def covariances_hac(panel: PanelData, bandwidth: int | str = "auto") -> CovSet:
    """Newey-West covariances; ``"auto"`` uses floor(4 (T/100)^(2/9)) per period."""
    if panel.t0 < 4 or panel.t1 < 4:
        raise ValueError("HAC covariance needs t0 >= 4 and t1 >= 4")
    if bandwidth == "auto":
        bw_pre, bw_post = auto_bandwidth(panel.t0), auto_bandwidth(panel.t1)
    else:
        bw_pre = bw_post = int(bandwidth)
        if bw_pre < 0:
            raise ValueError("bandwidth must be non-negative")
        if bw_pre >= min(panel.t0, panel.t1):
            raise ValueError(f"bandwidth {bw_pre} must be smaller than the period length")
    zs, zg, zy, zm = _block_series(panel)
    return CovSet(
        v_sigma=_long_run(zs, bw_pre),
        v_gamma=_long_run(zg, bw_pre),
        v_y=max(0.0, float(_long_run(zy, bw_post)[0, 0])),
        v_mu=_long_run(zm, bw_post),
    )


def covariances(panel: PanelData, mode: str = "iid") -> CovSet:
    if mode == "iid":
        return covariances_iid(panel)
    if mode == "hac":
        return covariances_hac(panel)
    raise ValueError(f"unknown covariance mode {mode!r}; use iid or hac")


def inflate(cov: CovSet) -> CovSet:
    """Add max|V| * I to the three matrix blocks; v_y is left alone."""

    def up(v):
        return v + max_abs(v) * np.eye(v.shape[0])

    return replace(
        cov,
        v_sigma=up(cov.v_sigma),
        v_gamma=up(cov.v_gamma),
        v_mu=up(cov.v_mu),
        inflated=(True, True, True),
    )
