"""Two-stage improvement of a Lee-Carter baseline by a multiplicative factor ``q``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..data_ingest import MortalityTensor, Panel
from ..leecarter import LeeCarterFit, lc_predict
from ..numcore.arima import arima_fit, arima_forecast
from .models import (
    ForestModel,
    ForestParams,
    GbmModel,
    GbmParams,
    fit_poisson_forest,
    fit_poisson_gbm,
    fit_poisson_tree,
)
from .trees import TreeModel, TreeParams

ImprovementModel = Union[TreeModel, ForestModel, GbmModel]


@dataclass
class ImprovementTargets:
    """Training rows for the improvement models, one per usable grid cell.

    ``features`` columns are ``(age, year, cohort)``; ``d`` is the
    Lee-Carter expected deaths, used as exposure.
    """

    features: np.ndarray
    D: np.ndarray
    d: np.ndarray
    ratio: np.ndarray
    cell: np.ndarray
    shape: tuple[int, int]
    excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return self.D.size


def grid_features(ages, years) -> np.ndarray:
    a, t = np.meshgrid(np.asarray(ages), np.asarray(years), indexing="ij")
    return np.column_stack([a.ravel(), t.ravel(), (t - a).ravel()]).astype(float)


def improvement_targets(data: MortalityTensor | Panel, lcfit: LeeCarterFit) -> ImprovementTargets:
    panel = data[lcfit.subpopulation] if isinstance(data, MortalityTensor) else data
    if not np.array_equal(panel.years, lcfit.years):
        panel = panel.window(int(lcfit.years[0]), int(lcfit.years[-1]))
    _, d = lc_predict(lcfit, panel.exposures)
    X = grid_features(lcfit.ages, lcfit.years)
    D = panel.deaths.ravel()
    d = d.ravel()
    keep = d > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(keep, D / d, np.nan)
    cells = np.arange(D.size)
    return ImprovementTargets(X[keep], D[keep], d[keep], ratio[keep], cells[keep], panel.deaths.shape, cells[~keep])


def fit_tree(targets: ImprovementTargets, params: TreeParams | None = None) -> TreeModel:
    return fit_poisson_tree(targets.features, targets.D, targets.d, params)


def fit_forest(targets: ImprovementTargets, params: ForestParams | None = None) -> ForestModel:
    return fit_poisson_forest(targets.features, targets.D, targets.d, params)


def fit_gbm(targets: ImprovementTargets, params: GbmParams | None = None) -> GbmModel:
    return fit_poisson_gbm(targets.features, targets.D, targets.d, params)


def predict_q(model: ImprovementModel, age, year, cohort=None) -> np.ndarray:
    age = np.asarray(age, dtype=float)
    year = np.asarray(year, dtype=float)
    cohort = year - age if cohort is None else np.asarray(cohort, dtype=float)
    age, year, cohort = np.broadcast_arrays(age, year, cohort)
    X = np.column_stack([age.ravel(), year.ravel(), cohort.ravel()])
    return model.predict(X).reshape(age.shape)


def q_surface(model: ImprovementModel, ages, years) -> np.ndarray:
    return model.predict(grid_features(ages, years)).reshape(len(ages), len(years))


def improved_rates(lcfit: LeeCarterFit, model: ImprovementModel) -> np.ndarray:
    return lcfit.rates * q_surface(model, lcfit.ages, lcfit.years)


@dataclass
class MlForecast:
    years: np.ndarray
    rates: np.ndarray
    orders: list
    flags: dict = field(default_factory=dict)


def forecast_log_rates(log_rates: np.ndarray, horizon: int) -> tuple[np.ndarray, list, int]:
    """ARIMA per age row of a log-rate surface; returns forecasts, models, fallback count."""
    out = np.empty((log_rates.shape[0], horizon))
    models = []
    fallbacks = 0
    for i, series in enumerate(log_rates):
        m = arima_fit(series, allow_drift=True)
        out[i] = arima_forecast(m, series, horizon)
        models.append(m)
        fallbacks += int(m.fallback)
    return out, models, fallbacks


def forecast_ml(lcfit: LeeCarterFit, model: ImprovementModel, horizon: int, rates=None) -> MlForecast:
    """Extrapolate ``log mu_ML`` age by age with the AICc-selected ARIMA.

    ``rates`` may carry a precomputed improved surface on the fit grid.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    mu = improved_rates(lcfit, model) if rates is None else np.asarray(rates)
    fc, models, fallbacks = forecast_log_rates(np.log(mu), horizon)
    years = lcfit.years[-1] + np.arange(1, horizon + 1)
    return MlForecast(years, np.exp(fc), [m.to_dict() for m in models], {"arima_fallbacks": fallbacks})
