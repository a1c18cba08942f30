"""Classical age-period-cohort Poisson model ``log mu = beta[a] + kappa[t] + gamma[t - a]``.

Identifiability: ``sum kappa = 0``, ``sum gamma = 0`` and ``sum c * gamma = 0`` over the
cohort range, with the age effect absorbing the removed level and trend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_ingest import MortalityTensor, Panel, Subpopulation
from .numcore.arima import arima_fit, arima_forecast
from .numcore.irls import penalized_poisson_irls

YOUNG_COHORTS_EXCLUDED = 5


@dataclass
class ApcFit:
    subpopulation: Subpopulation
    ages: np.ndarray
    years: np.ndarray
    cohorts: np.ndarray
    beta_age: np.ndarray
    kappa_period: np.ndarray
    gamma_cohort: np.ndarray
    gamma_se: np.ndarray | None = None
    merged_cohorts: list = field(default_factory=list)
    deviance: float = float("nan")

    @property
    def log_rates(self) -> np.ndarray:
        c_idx = (self.years[None, :] - self.ages[:, None]) - self.cohorts[0]
        return self.beta_age[:, None] + self.kappa_period[None, :] + self.gamma_cohort[c_idx]

    @property
    def rates(self) -> np.ndarray:
        return np.exp(self.log_rates)

    def to_dict(self) -> dict:
        return {
            "model": "apc",
            "subpopulation": self.subpopulation.label,
            "ages": self.ages.tolist(),
            "years": self.years.tolist(),
            "cohorts": self.cohorts.tolist(),
            "beta_age": self.beta_age.tolist(),
            "kappa_period": self.kappa_period.tolist(),
            "gamma_cohort": self.gamma_cohort.tolist(),
            "gamma_se": None if self.gamma_se is None else self.gamma_se.tolist(),
            "merged_cohorts": [int(c) for c in self.merged_cohorts],
            "deviance": self.deviance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ApcFit":
        return cls(
            Subpopulation.parse(d["subpopulation"]),
            np.asarray(d["ages"]),
            np.asarray(d["years"]),
            np.asarray(d["cohorts"]),
            np.asarray(d["beta_age"], dtype=float),
            np.asarray(d["kappa_period"], dtype=float),
            np.asarray(d["gamma_cohort"], dtype=float),
            None if d.get("gamma_se") is None else np.asarray(d["gamma_se"], dtype=float),
            list(d.get("merged_cohorts", [])),
            d.get("deviance", float("nan")),
        )


def apply_constraints(beta, kappa, gamma, ages, years, cohorts):
    """Project effects onto the constraint space; works column-wise on 2-D inputs.

    The least-squares line of gamma on the centered cohort index is moved
    into period (slope) and age (level and slope), then the period mean is
    moved into age. Fitted log-rates are unchanged and the map is idempotent.
    """
    beta = np.array(beta, dtype=float)
    kappa = np.array(kappa, dtype=float)
    gamma = np.array(gamma, dtype=float)
    ages = np.asarray(ages, dtype=float)
    years = np.asarray(years, dtype=float)
    c = np.asarray(cohorts, dtype=float)
    c_bar = c.mean()
    cc = c - c_bar
    shape = (-1,) + (1,) * (gamma.ndim - 1)
    g0 = gamma.mean(axis=0)
    g1 = (cc.reshape(shape) * gamma).sum(axis=0) / (cc @ cc)
    gamma = gamma - g0 - g1 * cc.reshape(shape)
    # g0 + g1 * (t - a - c_bar) moves into kappa (t part) and beta (rest)
    kappa = kappa + g1 * years.reshape(shape)
    beta = beta + g0 - g1 * (ages.reshape(shape) + c_bar)
    k_bar = kappa.mean(axis=0)
    kappa = kappa - k_bar
    beta = beta + k_bar
    return beta, kappa, gamma


def _cohort_groups(ages, years):
    cohorts = np.arange(years[0] - ages[-1], years[-1] - ages[0] + 1)
    grid_c = years[None, :] - ages[:, None]
    counts = np.bincount((grid_c - cohorts[0]).ravel(), minlength=cohorts.size)
    group = np.arange(cohorts.size)
    merged = []
    # sparse corners merge inward until every group has at least two cells
    i = 0
    while i < cohorts.size - 1 and counts[: i + 1].sum() < 2:
        i += 1
    group[:i] = i
    merged.extend(cohorts[:i].tolist())
    j = cohorts.size - 1
    while j > 0 and counts[j:].sum() < 2:
        j -= 1
    group[j + 1 :] = j
    merged.extend(cohorts[j + 1 :].tolist())
    _, group = np.unique(group, return_inverse=True)
    return cohorts, group, merged


def fit_apc_panel(panel: Panel, sub: Subpopulation, ages) -> ApcFit:
    ages = np.asarray(ages)
    years = panel.years
    A, T = len(ages), len(years)
    if T < 10:
        raise ValueError(f"{sub}: APC needs at least 10 years, got {T}")
    cohorts, group, merged = _cohort_groups(ages, years)
    G = group.max() + 1

    a_idx, t_idx = np.meshgrid(np.arange(A), np.arange(T), indexing="ij")
    a_idx, t_idx = a_idx.ravel(), t_idx.ravel()
    g_idx = group[(years[t_idx] - ages[a_idx]) - cohorts[0]]
    # columns: all ages, periods but the first, cohort groups but the first and last
    n = A * T
    p = A + (T - 1) + (G - 2)
    X = np.zeros((n, p))
    rows = np.arange(n)
    X[rows, a_idx] = 1.0
    m = t_idx > 0
    X[rows[m], A + t_idx[m] - 1] = 1.0
    m = (g_idx > 0) & (g_idx < G - 1)
    X[rows[m], A + T - 1 + g_idx[m] - 1] = 1.0

    y = panel.deaths.ravel()
    offset = np.log(panel.exposures.ravel())
    res = penalized_poisson_irls(X, offset, y, None, max_iter=100, tol=1e-10, compute_edf=False)

    # raw coefficients -> full (beta, kappa, gamma) via a linear expansion map
    M = np.zeros((A + T + cohorts.size, p))
    M[:A, :A] = np.eye(A)
    M[A + 1 : A + T, A : A + T - 1] = np.eye(T - 1)
    for ci in range(cohorts.size):
        gi = group[ci]
        if 0 < gi < G - 1:
            M[A + T + ci, A + T - 1 + gi - 1] = 1.0
    L_b, L_k, L_g = apply_constraints(M[:A], M[A : A + T], M[A + T :], ages, years, cohorts)
    L = np.vstack([L_b, L_k, L_g])
    full = L @ res.coef
    beta, kappa, gamma = full[:A], full[A : A + T], full[A + T :]

    gamma_se = None
    try:
        cov = np.linalg.inv(res.hessian)
        Lg = L[A + T :]
        gamma_se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", Lg, cov, Lg), 0.0))
    except np.linalg.LinAlgError:
        pass
    return ApcFit(sub, ages.copy(), years.copy(), cohorts, beta, kappa, gamma, gamma_se, merged, res.deviance)


def fit_apc(tensor: MortalityTensor, subpop: Subpopulation) -> ApcFit:
    return fit_apc_panel(tensor[subpop], subpop, tensor.ages)


@dataclass
class ApcForecast:
    years: np.ndarray
    rates: np.ndarray
    kappa: np.ndarray
    gamma_future: np.ndarray
    flags: dict = field(default_factory=dict)


def forecast_apc(fit: ApcFit, horizon: int) -> ApcForecast:
    """ARIMA on kappa and on gamma without its youngest cohorts; beta frozen."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    k_model = arima_fit(fit.kappa_period, allow_drift=True)
    k_future = arima_forecast(k_model, fit.kappa_period, horizon)

    series = fit.gamma_cohort[:-YOUNG_COHORTS_EXCLUDED]
    g_model = arima_fit(series, allow_drift=True)
    g_steps = arima_forecast(g_model, series, YOUNG_COHORTS_EXCLUDED + horizon)
    g_future = g_steps[YOUNG_COHORTS_EXCLUDED:]
    gamma_ext = np.concatenate([fit.gamma_cohort, g_future])

    years = fit.years[-1] + np.arange(1, horizon + 1)
    c_idx = (years[None, :] - fit.ages[:, None]) - fit.cohorts[0]
    log_rates = fit.beta_age[:, None] + k_future[None, :] + gamma_ext[c_idx]
    flags = {"kappa_arima_fallback": k_model.fallback, "gamma_arima_fallback": g_model.fallback}
    return ApcForecast(years, np.exp(log_rates), k_future, g_future, flags)
