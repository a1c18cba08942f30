"""COVID-19 projection scenarios on top of the pooled GAM.

Scenario kinds:

* ``I``   trained through 2019 without the indicator; the pandemic years are ignored.
* ``II``  trained through 2021 with the indicator, which stays at 1.
* ``III`` as II, with the indicator decaying as ``exp(-rho * h)``.
* ``IV``  the kind-I baseline plus a constant excess-mortality overlay
  estimated from 2020 and 2021.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
import pandas as pd

from .data_ingest import MortalityTensor, Subpopulation
from .gam_apc import DEFAULT_COVID_YEARS, GamConfig, GamFit, extrapolate_forecast, fit_gam

KINDS = ("I", "II", "III", "IV")
SCENARIO_COLUMNS = ["scenario", "country", "gender", "age", "year", "rate", "overlay-flag"]


@dataclass(frozen=True)
class ScenarioSpec:
    """One scenario run.

    ``cutoff`` is the last training year; ``None`` picks 2019 for kinds I
    and IV and 2021 for II and III. ``end`` is the last forecast year.
    """

    kind: str
    cutoff: int | None = None
    rho: float = math.log(2.0)
    start: int = 1990
    end: int = 2025
    covid_years: tuple[int, ...] = DEFAULT_COVID_YEARS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "III" and not self.rho > 0:
            raise ValueError("scenario III needs rho > 0")

    @property
    def training_cutoff(self) -> int:
        if self.cutoff is not None:
            return self.cutoff
        return 2019 if self.kind in ("I", "IV") else max(self.covid_years)

    @property
    def uses_indicator(self) -> bool:
        return self.kind in ("II", "III")

    @property
    def output_years(self) -> np.ndarray:
        # IV is reported from the first year after the observed shock
        first = max(self.covid_years) + 1 if self.kind == "IV" else self.training_cutoff + 1
        return np.arange(first, self.end + 1)

    def gam_config(self, base: GamConfig | None = None) -> GamConfig:
        base = base or GamConfig()
        covid = None
        if self.uses_indicator:
            covid = tuple(y for y in self.covid_years if y <= self.training_cutoff)
        return replace(base, covid_years=covid or None)


def build_covid_path(spec: ScenarioSpec, countries: Iterable, years) -> dict[str, np.ndarray]:
    """Indicator value per forecast year for every country code."""
    years = np.asarray(years)
    if years.size and years[0] != spec.training_cutoff + 1:
        raise ValueError(f"forecast years must start at {spec.training_cutoff + 1}, got {years[0]}")
    h = np.arange(1, years.size + 1, dtype=float)
    if spec.kind == "II":
        path = np.ones_like(h)
    elif spec.kind == "III":
        path = np.exp(-spec.rho * h)
    else:
        path = np.zeros_like(h)
    return {getattr(c, "value", c): path.copy() for c in countries}


@dataclass
class ExcessOverlay:
    """Per-subpopulation excess rates ``(ages, years)`` and their mean overlay ``(ages,)``."""

    years: tuple[int, ...]
    excess: dict[str, np.ndarray]
    overlay: dict[str, np.ndarray]
    excluded: list[str] = field(default_factory=list)


def compute_excess(tensor: MortalityTensor, baseline: GamFit, years=DEFAULT_COVID_YEARS) -> ExcessOverlay:
    """Observed minus baseline-expected rates in the shock years.

    The baseline is extrapolated past its last fitted year; the overlay is
    the mean of the annual excess-rate surfaces.
    """
    years = tuple(int(y) for y in years)
    last = int(baseline.years[-1])
    if min(years) <= last:
        raise ValueError(f"baseline must end before {min(years)}, ends {last}")
    horizon = max(years) - last
    fc = extrapolate_forecast(baseline, horizon)
    cols = [y - last - 1 for y in years]
    excess, overlay, excluded = {}, {}, []
    for sub in baseline.subpops:
        label = sub.label
        panel = tensor[sub] if sub in tensor else None
        if panel is None or not all(y in panel.years for y in years):
            excluded.append(label)
            continue
        idx = [int(np.flatnonzero(panel.years == y)[0]) for y in years]
        obs = panel.deaths[:, idx]
        E = panel.exposures[:, idx]
        expected = E * fc.rates[label][:, cols]
        ex = (obs - expected) / E
        excess[label] = ex
        overlay[label] = ex.mean(axis=1)
    return ExcessOverlay(years, excess, overlay, excluded)


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    fit: GamFit
    years: np.ndarray
    rates: dict[str, np.ndarray]
    baseline: dict[str, np.ndarray]
    covid_path: dict[str, np.ndarray]
    overlay: ExcessOverlay | None = None
    flags: dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        frames = []
        ages = self.fit.ages
        for sub in self.fit.subpops:
            if sub.label not in self.rates:
                continue
            R = self.rates[sub.label]
            a, t = np.meshgrid(ages, self.years, indexing="ij")
            flag = int(self.overlay is not None and sub.label in self.overlay.overlay)
            frames.append(
                pd.DataFrame(
                    {
                        "scenario": self.spec.kind,
                        "country": sub.country.value,
                        "gender": sub.gender.value,
                        "age": a.ravel(),
                        "year": t.ravel(),
                        "rate": R.ravel(),
                        "overlay-flag": flag,
                    }
                )
            )
        df = pd.concat(frames, ignore_index=True)
        return df.sort_values(["country", "gender", "year", "age"], kind="stable").reset_index(drop=True)[SCENARIO_COLUMNS]


def training_tensor(tensor: MortalityTensor, spec: ScenarioSpec, subpops=None) -> MortalityTensor:
    subpops = list(tensor.subpopulations if subpops is None else subpops)
    return tensor.select(subpops).window(spec.start, spec.training_cutoff)


def scenario_forecast(
    tensor: MortalityTensor,
    spec: ScenarioSpec,
    subpops: Iterable[Subpopulation] | None = None,
    grouping: str = "pooled-all",
    gam_config: GamConfig | None = None,
    fit: GamFit | None = None,
) -> ScenarioResult:
    """Fit per the scenario's training rule and project to ``spec.end``.

    ``fit`` may pass in an already trained model for the same window and
    indicator setting (kinds I and IV share one, as do II and III).
    """
    subpops = list(tensor.subpopulations if subpops is None else subpops)
    if fit is None:
        fit = fit_gam(training_tensor(tensor, spec, subpops), subpops, grouping, spec.gam_config(gam_config))
    cutoff = int(fit.years[-1])
    if cutoff != spec.training_cutoff:
        raise ValueError(f"fit ends {cutoff}, scenario {spec.kind} expects {spec.training_cutoff}")
    years = np.arange(cutoff + 1, spec.end + 1)
    countries = list(dict.fromkeys(s.country for s in fit.subpops))
    path = build_covid_path(spec, countries, years)
    fc = extrapolate_forecast(fit, len(years), path)
    keep = np.isin(years, spec.output_years)
    baseline = {k: v[:, keep] for k, v in fc.rates.items()}
    rates = {k: v.copy() for k, v in baseline.items()}
    flags = {"clipped": dict(fc.clipped)}
    overlay = None
    if spec.kind == "IV":
        overlay = compute_excess(tensor, fit, spec.covid_years)
        n_clip = {}
        for label, ov in overlay.overlay.items():
            r = baseline[label] + ov[:, None]
            low, high = r <= 0, r > 1
            n_clip[label] = int(low.sum() + high.sum())
            # rates must stay in (0, 1]; nonpositive values fall back to a tiny positive floor
            rates[label] = np.clip(r, np.finfo(float).tiny, 1.0)
        flags["overlay_clipped"] = n_clip
        flags["overlay_excluded"] = list(overlay.excluded)
    return ScenarioResult(spec, fit, years[keep], rates, baseline, path, overlay, flags)


def run_scenarios(
    tensor: MortalityTensor,
    kinds: Iterable[str] = KINDS,
    subpops=None,
    grouping: str = "pooled-all",
    gam_config: GamConfig | None = None,
    rho: float = math.log(2.0),
    end: int = 2025,
) -> dict[str, ScenarioResult]:
    """All requested scenarios, fitting each distinct training setup once."""
    cache = {}
    out = {}
    for kind in kinds:
        spec = ScenarioSpec(kind, rho=rho, end=end)
        key = (spec.training_cutoff, spec.uses_indicator)
        res = scenario_forecast(tensor, spec, subpops, grouping, gam_config, cache.get(key))
        cache[key] = res.fit
        out[kind] = res
    return out
