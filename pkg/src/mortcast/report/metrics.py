"""Root-mean-square error on rate or death-count scale."""

from __future__ import annotations

import numpy as np

SCALES = ("rates", "deaths")


def rmse(predicted, observed, scale: str = "rates", exposures=None) -> float:
    """RMSE over every cell of two surfaces on the same grid.

    With ``scale="rates"`` the inputs are compared as given (predicted
    rates against observed rates). With ``scale="deaths"`` and
    ``exposures`` supplied, predicted rates are turned into expected deaths
    ``E * mu`` and ``observed`` is taken to be death counts; without
    ``exposures`` both inputs are already counts.
    """
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}, got {scale!r}")
    pred = np.asarray(predicted, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if pred.shape != obs.shape:
        raise ValueError(f"grid mismatch: {pred.shape} vs {obs.shape}")
    if scale == "deaths" and exposures is not None:
        E = np.asarray(exposures, dtype=float)
        if E.shape != pred.shape:
            raise ValueError(f"exposure grid mismatch: {E.shape} vs {pred.shape}")
        pred = E * pred
    if pred.size == 0:
        raise ValueError("empty surfaces")
    # C-order copy: the summation order, and so the last bit, must not depend on memory layout
    diff = np.ravel(pred - obs, order="C")
    # scale by the largest error so tiny differences do not square to zero
    m = float(np.max(np.abs(diff)))
    if m == 0.0 or not np.isfinite(m):
        return m
    return float(m * np.sqrt(np.mean((diff / m) ** 2)))


def panel_rmse(rates, panel) -> tuple[float, float]:
    """``(rate_rmse, deaths_rmse)`` of a predicted rate surface against a panel."""
    return (
        rmse(rates, panel.rates, "rates"),
        rmse(rates, panel.deaths, "deaths", panel.exposures),
    )
