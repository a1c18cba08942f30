"""Multi-population tensor-product P-spline GAM over (age, period).

Each subpopulation ``s`` gets its own surface ``f_s(age, period)`` built from
cubic B-spline margins with second-order difference penalties. The surfaces
are centered to sum to zero over the observed grid so that the shared
intercept carries the level. An optional COVID indicator adds one coefficient
per country (or per country and gender) in the indicator years.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.linalg as sla

from .data_ingest import Country, MortalityTensor, Subpopulation
from .numcore.irls import (
    DEFAULT_GRID,
    BlockDesign,
    ConvergenceError,
    SmoothingProblem,
    penalized_poisson_irls,
    select_smoothing,
)
from .numcore.splines import DomainError, SplineBasis, tensor_design, tensor_penalties

log = logging.getLogger(__name__)

GROUPINGS = ("pooled-all", "continentwise", "single-subpop")
CONTINENTS = ({Country.FIN, Country.DEU, Country.ITA, Country.NLD}, {Country.USA})
DEFAULT_COVID_YEARS = (2020, 2021)
MAX_HORIZON = 10


class GamConfigError(ValueError):
    pass


@dataclass
class GamConfig:
    """Basis, penalty and COVID options; ``lams`` fixes the smoothing weights."""

    num_basis_age: int = 10
    num_basis_period: int = 10
    degree: int = 3
    penalty_order: int = 2
    covid_years: tuple[int, ...] | None = None
    covid_by_gender: bool = False
    lams: tuple[float, float] | None = None
    grid: tuple[float, ...] = DEFAULT_GRID
    tol: float = 1e-8
    max_iter: int = 100


@dataclass
class GamFit:
    """Fitted surfaces; ``coef[label]`` is the ``(K_age, K_period)`` coefficient matrix."""

    ages: np.ndarray
    years: np.ndarray
    age_basis: SplineBasis
    period_basis: SplineBasis
    subpops: list[Subpopulation]
    intercept: dict[str, float]
    coef: dict[str, np.ndarray]
    lams: dict[str, tuple[float, float]]
    covid: dict[str, float] = field(default_factory=dict)
    covid_years: tuple[int, ...] | None = None
    covid_by_gender: bool = False
    grouping: str = "pooled-all"
    units: list[list[str]] = field(default_factory=list)
    deviance: dict[str, float] = field(default_factory=dict)
    edf: dict[str, float] = field(default_factory=dict)

    def covid_key(self, sub: Subpopulation) -> str:
        return sub.label if self.covid_by_gender else sub.country.value

    def covid_coef(self, sub: Subpopulation) -> float:
        return self.covid.get(self.covid_key(sub), 0.0)

    def surface(self, sub: Subpopulation, ages=None, years=None, extrapolate: bool = False) -> np.ndarray:
        """``f_s`` on an age x year grid (defaults to the training grid)."""
        ages = self.ages if ages is None else np.asarray(ages)
        years = self.years if years is None else np.asarray(years)
        Ba = self.age_basis(ages)
        Bp = self.period_basis(years, extrapolate=extrapolate)
        return Ba @ self.coef[sub.label] @ Bp.T

    def to_dict(self) -> dict:
        def basis(b):
            return {"lower": b.lower, "upper": b.upper, "num_basis": b.num_basis, "degree": b.degree}

        return {
            "model": "gam",
            "ages": self.ages.tolist(),
            "years": self.years.tolist(),
            "age_basis": basis(self.age_basis),
            "period_basis": basis(self.period_basis),
            "subpops": [s.label for s in self.subpops],
            "intercept": dict(self.intercept),
            "coef": {k: v.tolist() for k, v in self.coef.items()},
            "lams": {k: list(v) for k, v in self.lams.items()},
            "covid": dict(self.covid),
            "covid_years": None if self.covid_years is None else list(self.covid_years),
            "covid_by_gender": self.covid_by_gender,
            "grouping": self.grouping,
            "units": self.units,
            "deviance": dict(self.deviance),
            "edf": dict(self.edf),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GamFit":
        return cls(
            np.asarray(d["ages"]),
            np.asarray(d["years"]),
            SplineBasis(**d["age_basis"]),
            SplineBasis(**d["period_basis"]),
            [Subpopulation.parse(s) for s in d["subpops"]],
            dict(d["intercept"]),
            {k: np.asarray(v, dtype=float) for k, v in d["coef"].items()},
            {k: tuple(v) for k, v in d["lams"].items()},
            dict(d.get("covid", {})),
            None if d.get("covid_years") is None else tuple(d["covid_years"]),
            d.get("covid_by_gender", False),
            d.get("grouping", "pooled-all"),
            d.get("units", []),
            dict(d.get("deviance", {})),
            dict(d.get("edf", {})),
        )


def grouping_units(subpops: Iterable[Subpopulation], grouping: str) -> list[list[Subpopulation]]:
    subpops = sorted(subpops, key=Subpopulation.sort_key)
    if grouping == "pooled-all":
        return [subpops]
    if grouping == "continentwise":
        units = [[s for s in subpops if s.country in cont] for cont in CONTINENTS]
        return [u for u in units if u]
    if grouping == "single-subpop":
        return [[s] for s in subpops]
    raise GamConfigError(f"unknown grouping {grouping!r}; expected one of {GROUPINGS}")


def centering_basis(Ba: np.ndarray, Bp: np.ndarray) -> np.ndarray:
    """Orthonormal basis ``Z`` of coefficients whose surface sums to zero over the grid."""
    c = np.kron(Ba.sum(axis=0), Bp.sum(axis=0))
    Q, _ = sla.qr(c[:, None])
    return Q[:, 1:]


@dataclass
class _Block:
    sub: Subpopulation
    X: np.ndarray  # centered tensor design on the subpopulation's cells
    Z: np.ndarray
    Pa: np.ndarray
    Pp: np.ndarray
    y: np.ndarray
    offset: np.ndarray
    covid_rows: np.ndarray  # boolean over the block's cells


def _blocks(tensor, subpops, ages, years, Ba, Bp, config) -> list[_Block]:
    Ka, Kp = Ba.shape[1], Bp.shape[1]
    X_full = tensor_design(np.repeat(Ba, len(years), axis=0), np.tile(Bp, (len(ages), 1)))
    Z = centering_basis(Ba, Bp)
    X = X_full @ Z
    Pa_full, Pp_full = tensor_penalties(Ka, Kp, config.penalty_order)
    Pa, Pp = Z.T @ Pa_full @ Z, Z.T @ Pp_full @ Z
    year_grid = np.tile(years, len(ages))
    covid_rows = np.isin(year_grid, config.covid_years or ())
    out = []
    for s in subpops:
        p = tensor[s]
        out.append(_Block(s, X, Z, Pa, Pp, p.deaths.ravel(), np.log(p.exposures.ravel()), covid_rows))
    return out


def _covid_keys(subpops, config) -> list[str]:
    if not config.covid_years:
        return []
    keys = [s.label if config.covid_by_gender else s.country.value for s in subpops]
    return list(dict.fromkeys(keys))


def _unit_problem(blocks: list[_Block], config: GamConfig):
    keys = _covid_keys([b.sub for b in blocks], config)
    n_cells = blocks[0].X.shape[0]
    n = n_cells * len(blocks)
    shared = np.zeros((n, 1 + len(keys)))
    shared[:, 0] = 1.0
    parts = []
    for i, b in enumerate(blocks):
        rows = np.arange(i * n_cells, (i + 1) * n_cells)
        if keys:
            key = b.sub.label if config.covid_by_gender else b.sub.country.value
            shared[rows[b.covid_rows], 1 + keys.index(key)] = 1.0
        parts.append((rows, b.X))
    design = BlockDesign(shared, parts)
    y = np.concatenate([b.y for b in blocks])
    offset = np.concatenate([b.offset for b in blocks])
    p = design.shape[1]
    penalties = []
    for (_, cols, _), b in zip(design.blocks, blocks):
        for P in (b.Pa, b.Pp):
            full = np.zeros((p, p))
            full[cols, cols] = P
            penalties.append(full)
    return design, y, offset, penalties, keys


def _select_lams(block: _Block, config: GamConfig) -> tuple[tuple[float, float], list]:
    design, y, offset, penalties, _ = _unit_problem([block], config)
    problem = SmoothingProblem(design, offset, y, penalties, config.max_iter, config.tol)
    sel = select_smoothing(problem, [config.grid, config.grid])
    return (float(sel.lams[0]), float(sel.lams[1])), sel.trace


def fit_gam(
    tensor: MortalityTensor,
    subpops: Iterable[Subpopulation] | None = None,
    grouping: str = "pooled-all",
    config: GamConfig | None = None,
) -> GamFit:
    """Fit one penalized Poisson GAM per grouping unit.

    Smoothing weights ``(lambda_age, lambda_period)`` are chosen per
    subpopulation by GCV on that subpopulation's own data (intercept,
    surface and, if active, its COVID column), then the unit is refitted
    jointly at those weights. ``config.lams`` skips the search.
    """
    config = config or GamConfig()
    subpops = list(tensor.subpopulations if subpops is None else subpops)
    missing = [s.label for s in subpops if s not in tensor]
    if missing:
        raise GamConfigError(f"subpopulations not in tensor: {missing}")
    units = grouping_units(subpops, grouping)
    years = tensor[subpops[0]].years
    for s in subpops:
        if not np.array_equal(tensor[s].years, years):
            raise GamConfigError(f"{s}: year range differs from {subpops[0]}; GAM needs a common grid")
    ages = tensor.ages
    if config.covid_years:
        absent = [y for y in config.covid_years if y not in years]
        if absent:
            raise GamConfigError(f"covid years {absent} not in data range {years[0]}-{years[-1]}")
    age_basis = SplineBasis(float(ages[0]), float(ages[-1]), config.num_basis_age, config.degree)
    period_basis = SplineBasis(float(years[0]), float(years[-1]), config.num_basis_period, config.degree)
    Ba, Bp = age_basis(ages), period_basis(years)

    intercept, coef, lams, covid, dev, edf = {}, {}, {}, {}, {}, {}
    for unit in units:
        blocks = _blocks(tensor, unit, ages, years, Ba, Bp, config)
        traces = {}
        for b in blocks:
            if config.lams is not None:
                lams[b.sub.label] = tuple(float(v) for v in config.lams)
            else:
                lams[b.sub.label], traces[b.sub.label] = _select_lams(b, config)
        design, y, offset, penalties, keys = _unit_problem(blocks, config)
        weights = [w for b in blocks for w in lams[b.sub.label]]
        S = sum(w * P for w, P in zip(weights, penalties))
        try:
            res = penalized_poisson_irls(design, offset, y, S, config.max_iter, config.tol)
        except ConvergenceError as exc:
            msg = f"GAM unit {[s.label for s in unit]} diverged; lambdas {lams}"
            raise ConvergenceError(msg, exc.trace) from exc
        for (_, cols, _), b in zip(design.blocks, blocks):
            label = b.sub.label
            intercept[label] = float(res.coef[0])
            coef[label] = (b.Z @ res.coef[cols]).reshape(Ba.shape[1], Bp.shape[1])
            dev[label] = res.deviance
            edf[label] = res.edf
        for k, key in enumerate(keys):
            covid[key] = float(res.coef[1 + k])
        log.debug("unit %s: deviance %.4g, edf %.2f", [s.label for s in unit], res.deviance, res.edf)
    return GamFit(
        np.asarray(ages).copy(),
        np.asarray(years).copy(),
        age_basis,
        period_basis,
        sorted(subpops, key=Subpopulation.sort_key),
        intercept,
        coef,
        lams,
        covid,
        tuple(config.covid_years) if config.covid_years else None,
        config.covid_by_gender,
        grouping,
        [[s.label for s in u] for u in units],
        dev,
        edf,
    )


def _covid_row(fit: GamFit, sub: Subpopulation, years, covid) -> np.ndarray:
    """Indicator values over ``years``; ``covid`` maps country/label -> values or a scalar."""
    years = np.asarray(years)
    if covid is None:
        ind = np.isin(years, fit.covid_years or ())
        return ind.astype(float)
    if isinstance(covid, Mapping):
        value = covid.get(sub.label, covid.get(sub.country.value, covid.get(sub.country, 0.0)))
    else:
        value = covid
    return np.broadcast_to(np.asarray(value, dtype=float), years.shape).astype(float)


def gam_predict(fit: GamFit, sub: Subpopulation, ages=None, years=None, covid=None) -> np.ndarray:
    """Rates ``exp(b0 + f_s + b_covid * covid)`` on an age x year grid.

    ``covid=None`` uses the fitted indicator years; otherwise a scalar, a
    vector over ``years`` or a mapping keyed by country code or label.
    """
    years = fit.years if years is None else np.asarray(years)
    out = (years < fit.years[0]) | (years > fit.years[-1])
    if out.any():
        raise DomainError(f"years {years[out].tolist()} outside fitted range; use extrapolate_forecast")
    eta = fit.intercept[sub.label] + fit.surface(sub, ages, years)
    eta = eta + fit.covid_coef(sub) * _covid_row(fit, sub, years, covid)[None, :]
    return np.exp(eta)


@dataclass
class MarginalEffects:
    """Centered effects per subpopulation label; ``center`` holds the removed means."""

    ages: np.ndarray
    years: np.ndarray
    cohorts: np.ndarray
    age: dict[str, np.ndarray]
    period: dict[str, np.ndarray]
    cohort: dict[str, np.ndarray]
    center: dict[str, tuple[float, float, float]]

    def to_frame(self):
        import pandas as pd

        rows = []
        for label in self.age:
            for comp, idx, vals in (
                ("age", self.ages, self.age[label]),
                ("period", self.years, self.period[label]),
                ("cohort", self.cohorts, self.cohort[label]),
            ):
                rows.extend((label, comp, int(i), float(np.exp(v))) for i, v in zip(idx, vals))
        return pd.DataFrame(rows, columns=["subpop", "component", "index", "exp-effect"])


def surface_effects(surface: np.ndarray, ages, years):
    """Uncentered age, period and diagonal cohort averages of an age x period surface."""
    surface = np.asarray(surface, dtype=float)
    ages = np.asarray(ages)
    years = np.asarray(years)
    f_a = surface.mean(axis=1)
    f_p = surface.mean(axis=0)
    c = (years[None, :] - ages[:, None]).ravel()
    cohorts = np.arange(c.min(), c.max() + 1)
    idx = c - cohorts[0]
    f_c = np.bincount(idx, weights=surface.ravel(), minlength=cohorts.size) / np.bincount(idx, minlength=cohorts.size)
    return f_a, f_p, cohorts, f_c


def marginal_effects(fit: GamFit, include_covid: bool = False) -> MarginalEffects:
    """Age, period and cohort effects of each fitted surface, mean-centered.

    ``include_covid`` adds ``b_covid`` in the indicator years to the surface
    before averaging, so the period effect shows the shock.
    """
    age, period, cohort, center = {}, {}, {}, {}
    cohorts = None
    for sub in fit.subpops:
        surf = fit.surface(sub)
        if include_covid and fit.covid_years:
            surf = surf + fit.covid_coef(sub) * _covid_row(fit, sub, fit.years, None)[None, :]
        f_a, f_p, cohorts, f_c = surface_effects(surf, fit.ages, fit.years)
        center[sub.label] = (float(f_a.mean()), float(f_p.mean()), float(f_c.mean()))
        age[sub.label] = f_a - f_a.mean()
        period[sub.label] = f_p - f_p.mean()
        cohort[sub.label] = f_c - f_c.mean()
    return MarginalEffects(fit.ages, fit.years, cohorts, age, period, cohort, center)


def extend_coefficients(coef: np.ndarray, extra: int) -> np.ndarray:
    """Append ``extra`` columns holding each row's last second difference constant."""
    coef = np.asarray(coef, dtype=float)
    out = np.empty((coef.shape[0], coef.shape[1] + extra))
    out[:, : coef.shape[1]] = coef
    curv = coef[:, -1] - 2 * coef[:, -2] + coef[:, -3]
    for j in range(coef.shape[1], out.shape[1]):
        out[:, j] = 2 * out[:, j - 1] - out[:, j - 2] + curv
    return out


@dataclass
class GamForecast:
    years: np.ndarray
    rates: dict[str, np.ndarray]
    covid_path: dict[str, np.ndarray]
    clipped: dict[str, int]


def extrapolate_forecast(fit: GamFit, horizon: int, covid_path: Mapping | None = None) -> GamForecast:
    """Project each surface ``horizon`` years past the fitted range.

    The period coefficients are continued with constant curvature and the
    period basis is extended with knots at the same spacing. ``covid_path``
    maps country code or label to a value in ``[0, 1]`` per future year;
    missing entries mean no COVID effect. Rates above 1 are clipped.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if horizon > MAX_HORIZON:
        raise ValueError(f"horizon capped at {MAX_HORIZON} years")
    last = fit.years[-1]
    years = last + np.arange(1, horizon + 1)
    basis = fit.period_basis
    extra = math.ceil(horizon / basis.spacing - 1e-9)
    ext = basis.extended(extra)
    Ba = fit.age_basis(fit.ages)
    Bp = ext(years)
    rates, paths, clipped = {}, {}, {}
    covid_path = covid_path or {}
    for sub in fit.subpops:
        C = extend_coefficients(fit.coef[sub.label], extra)
        eta = fit.intercept[sub.label] + Ba @ C @ Bp.T
        path = covid_path.get(sub.label, covid_path.get(sub.country.value, covid_path.get(sub.country, 0.0)))
        path = np.broadcast_to(np.asarray(path, dtype=float), years.shape).astype(float)
        if np.any((path < 0) | (path > 1)):
            raise ValueError(f"{sub}: covid path values must lie in [0, 1]")
        eta = eta + fit.covid_coef(sub) * path[None, :]
        mu = np.exp(eta)
        over = mu > 1.0
        clipped[sub.label] = int(over.sum())
        if over.any():
            log.warning("%s: %d forecast rates above 1 clipped", sub, int(over.sum()))
        rates[sub.label] = np.minimum(mu, 1.0)
        paths[sub.label] = path
    return GamForecast(years, rates, paths, clipped)

