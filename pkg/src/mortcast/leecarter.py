"""Poisson Lee-Carter model: ``log mu[a, t] = alpha[a] + beta[a] * kappa[t]``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_ingest import MortalityTensor, Panel, Subpopulation
from .numcore.arima import ArimaModel, arima_fit, arima_forecast
from .numcore.irls import ConvergenceError, poisson_deviance


@dataclass
class LeeCarterFit:
    subpopulation: Subpopulation
    ages: np.ndarray
    years: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    deviance: float = float("nan")
    sweeps: int = 0

    @property
    def log_rates(self) -> np.ndarray:
        return self.alpha[:, None] + self.beta[:, None] * self.kappa[None, :]

    @property
    def rates(self) -> np.ndarray:
        return np.exp(self.log_rates)

    def to_dict(self) -> dict:
        return {
            "model": "lc",
            "subpopulation": self.subpopulation.label,
            "ages": self.ages.tolist(),
            "years": self.years.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "kappa": self.kappa.tolist(),
            "deviance": self.deviance,
            "sweeps": self.sweeps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LeeCarterFit":
        return cls(
            Subpopulation.parse(d["subpopulation"]),
            np.asarray(d["ages"]),
            np.asarray(d["years"]),
            np.asarray(d["alpha"], dtype=float),
            np.asarray(d["beta"], dtype=float),
            np.asarray(d["kappa"], dtype=float),
            d.get("deviance", float("nan")),
            d.get("sweeps", 0),
        )


def normalize(alpha, beta, kappa):
    """Rescale to ``sum(beta) == 1`` and ``sum(kappa) == 0`` leaving the fit unchanged."""
    s = beta.sum()
    beta = beta / s
    kappa = kappa * s
    k_bar = kappa.mean()
    alpha = alpha + beta * k_bar
    kappa = kappa - k_bar
    return alpha, beta, kappa


def fit_lc_panel(
    panel: Panel,
    sub: Subpopulation,
    ages,
    tol: float = 1e-8,
    max_sweeps: int = 500,
) -> LeeCarterFit:
    """Alternating Newton updates of alpha, kappa, beta on the Poisson likelihood."""
    D = panel.deaths
    E = panel.exposures
    A, T = D.shape
    if T < 10:
        raise ValueError(f"{sub}: Lee-Carter needs at least 10 years, got {T}")
    logm = np.log(np.where(D > 0, D, 0.5) / E)
    alpha = logm.mean(axis=1)
    beta = np.full(A, 1.0 / A)
    kappa = np.zeros(T)

    def fitted(alpha, beta, kappa):
        return E * np.exp(alpha[:, None] + beta[:, None] * kappa[None, :])

    Dhat = fitted(alpha, beta, kappa)
    dev = poisson_deviance(D, Dhat)
    for sweep in range(1, max_sweeps + 1):
        alpha = alpha + (D - Dhat).sum(axis=1) / Dhat.sum(axis=1)
        Dhat = fitted(alpha, beta, kappa)
        kappa = kappa + ((D - Dhat) * beta[:, None]).sum(axis=0) / (Dhat * beta[:, None] ** 2).sum(axis=0)
        # re-centering kappa is absorbed by alpha, keeps the updates well scaled
        alpha = alpha + beta * kappa.mean()
        kappa = kappa - kappa.mean()
        Dhat = fitted(alpha, beta, kappa)
        curv = (Dhat * kappa[None, :] ** 2).sum(axis=1)
        # with no period signal (kappa == 0) beta is not identified and stays put
        step = np.divide(((D - Dhat) * kappa[None, :]).sum(axis=1), curv, out=np.zeros(A), where=curv > 0)
        beta = beta + step
        Dhat = fitted(alpha, beta, kappa)
        new_dev = poisson_deviance(D, Dhat)
        change = abs(dev - new_dev) / (abs(new_dev) + 1e-300)
        dev = new_dev
        if change < tol:
            break
    else:
        raise ConvergenceError(f"{sub}: Lee-Carter did not converge in {max_sweeps} sweeps")
    alpha, beta, kappa = normalize(alpha, beta, kappa)
    return LeeCarterFit(sub, np.asarray(ages), panel.years.copy(), alpha, beta, kappa, dev, sweep)


def fit_lc(tensor: MortalityTensor, subpop: Subpopulation, **kwargs) -> LeeCarterFit:
    return fit_lc_panel(tensor[subpop], subpop, tensor.ages, **kwargs)


def lc_predict(fit: LeeCarterFit, exposures) -> tuple[np.ndarray, np.ndarray]:
    """Fitted rates and expected deaths on the fit's grid."""
    E = np.asarray(exposures, dtype=float)
    mu = fit.rates
    if E.shape != mu.shape:
        raise ValueError(f"exposure grid {E.shape} does not match fit grid {mu.shape}")
    return mu, E * mu


@dataclass
class LcForecast:
    years: np.ndarray
    kappa: np.ndarray
    rates: np.ndarray
    arima: ArimaModel
    flags: dict = field(default_factory=dict)


def forecast_lc(fit: LeeCarterFit, horizon: int) -> LcForecast:
    """Extend kappa by the AICc-selected ARIMA and map it to rates with alpha, beta frozen."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    model = arima_fit(fit.kappa, allow_drift=True)
    k_future = arima_forecast(model, fit.kappa, horizon)
    rates = np.exp(fit.alpha[:, None] + fit.beta[:, None] * k_future[None, :])
    years = fit.years[-1] + np.arange(1, horizon + 1)
    return LcForecast(years, k_future, rates, model, {"arima_fallback": model.fallback})
