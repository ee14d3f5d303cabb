"""Outcome-only synthetic control baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drosc.lpsolve import simplex_cls
from drosc.panel import PanelData, split


@dataclass(frozen=True)
class ScFit:
    beta_sc: np.ndarray
    tau_sc: float
    sigma_hat_resid: float
    pre_rmse: float


def fit_sc(panel: PanelData) -> ScFit:
    if panel.t0 < 2:
        raise ValueError("synthetic control fit needs t0 >= 2")
    pre, post = split(panel)
    beta = simplex_cls(pre.x, pre.y)
    resid = pre.y - pre.x @ beta
    return ScFit(
        beta_sc=beta,
        tau_sc=float(np.mean(post.y - post.x @ beta)),
        sigma_hat_resid=float(np.sqrt(resid @ resid / (panel.t0 - 1))),
        pre_rmse=float(np.sqrt(np.mean(resid**2))),
    )
