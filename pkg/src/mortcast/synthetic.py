"""Synthetic mortality data in HMD and STMF file layouts.

Used by the test-suite and the demo scripts when real HMD files are not at
hand. Rates follow a Lee-Carter trend with an added cohort wave, a mild
period wiggle, a gender gap and a COVID shock in 2020-2021, so that every
model in the package has some structure to find.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_ingest import HMD_COUNTRY_FILES, HMD_MAX_AGE, Country, Gender

COUNTRY_NAMES = {
    Country.FIN: "Finland",
    Country.DEU: "Germany",
    Country.ITA: "Italy",
    Country.NLD: "Netherlands",
    Country.USA: "U.S.A.",
}
FIRST_YEAR = {Country.FIN: 1950, Country.DEU: 1990, Country.ITA: 1950, Country.NLD: 1950, Country.USA: 1933}
POPULATION = {Country.FIN: 2.7e6, Country.DEU: 4.1e7, Country.ITA: 2.9e7, Country.NLD: 8.5e6, Country.USA: 1.6e8}
COVID_SHOCK = {Country.FIN: 0.03, Country.DEU: 0.07, Country.ITA: 0.16, Country.NLD: 0.10, Country.USA: 0.14}
COUNTRY_LEVEL = {Country.FIN: 0.05, Country.DEU: 0.0, Country.ITA: -0.05, Country.NLD: -0.03, Country.USA: 0.08}


@dataclass
class SyntheticCountry:
    years: np.ndarray
    ages: np.ndarray
    deaths: dict
    exposures: dict
    rates: dict


def log_rate_surface(country: Country, gender: Gender, years, ages=None, covid: bool = True) -> np.ndarray:
    years = np.asarray(years, dtype=float)
    ages = np.arange(HMD_MAX_AGE + 1, dtype=float) if ages is None else np.asarray(ages, dtype=float)
    a = ages[:, None]
    t = years[None, :]
    male = gender == Gender.male
    base = np.where(
        a < 1,
        -4.6,
        -7.8 + 2.6 * np.exp(-a / 3.0) + 0.095 * np.clip(a - 30, 0, None) + 0.012 * np.clip(30 - a, 0, None),
    )
    if male:
        hump = 0.6 * np.exp(-((a - 22) ** 2) / 60.0)
        base = base + 0.35 + hump - 0.002 * np.clip(a - 60, 0, None) ** 1.3 * 0.3
    base = np.minimum(base + COUNTRY_LEVEL[country], -0.4)
    # age-specific improvement, faster at young ages
    beta = 0.6 + 1.4 * np.exp(-a / 25.0)
    kappa = -0.018 * (t - 1985) - 0.00006 * (t - 1985) ** 2
    period = 0.04 * np.sin((t - 1950) / 6.0)
    cohort = 0.10 * np.sin((t - a - 1900) / 12.0) * (a > 20) * (a < 95)
    log_m = base + beta * kappa + period + cohort
    if covid:
        shock = COVID_SHOCK[country] * (0.3 + np.clip(a - 40, 0, None) / 50.0)
        log_m = log_m + shock * ((t == 2020) | (t == 2021))
    return np.minimum(log_m, np.log(0.9))


def exposure_surface(country: Country, gender: Gender, years, ages=None) -> np.ndarray:
    years = np.asarray(years, dtype=float)
    ages = np.arange(HMD_MAX_AGE + 1, dtype=float) if ages is None else np.asarray(ages, dtype=float)
    a = ages[:, None]
    t = years[None, :]
    size = POPULATION[country] / 2 / 60.0
    survival = np.exp(-((a / 85.0) ** 6)) * np.exp(-0.004 * a)
    growth = (1.0 + 0.004 * (t - 1950)) * (1.0 + 0.3 * np.clip(a - 60, 0, None) / 50 * (t - 1950) / 70)
    return np.maximum(size * survival * growth, 5.0)


def simulate_country(country: Country, last_year: int = 2021, seed: int = 0) -> SyntheticCountry:
    rng = np.random.default_rng([seed, list(Country).index(country)])
    years = np.arange(FIRST_YEAR[country], last_year + 1)
    ages = np.arange(HMD_MAX_AGE + 1)
    deaths, expos, rates = {}, {}, {}
    for gender in Gender:
        m = np.exp(log_rate_surface(country, gender, years, ages))
        E = exposure_surface(country, gender, years, ages)
        D = rng.poisson(E * m).astype(float)
        deaths[gender], expos[gender], rates[gender] = D, E, m
    return SyntheticCountry(years, ages, deaths, expos, rates)


def _hmd_text(country: Country, kind: str, years, values_f, values_m) -> str:
    title = "Deaths" if kind == "deaths" else "Exposure to risk"
    lines = [
        f"{COUNTRY_NAMES[country]}, {title} (period 1x1), \tLast modified: 01 Jan 2024;  Methods Protocol: v6 (2017)",
        "",
        "  Year          Age             Female            Male           Total",
    ]
    for j, year in enumerate(years):
        for age in range(values_f.shape[0]):
            label = "110+" if age == HMD_MAX_AGE else str(age)
            f = values_f[age, j]
            m = values_m[age, j]
            lines.append(f"  {year:4d}          {label:<6s}{f:17.2f}{m:16.2f}{f + m:16.2f}")
    return "\n".join(lines) + "\n"


def write_hmd_dir(path, countries=None, hmd_last_year: int = 2019, seed: int = 0) -> dict:
    """Write ``<CODE>.Deaths_1x1.txt`` and ``<CODE>.Exposures_1x1.txt``; return the simulations."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    sims = {}
    for c in countries or list(Country):
        sim = simulate_country(c, seed=seed)
        keep = sim.years <= hmd_last_year
        yrs = sim.years[keep]
        code = HMD_COUNTRY_FILES[c]
        d = {g: np.round(sim.deaths[g][:, keep], 2) for g in Gender}
        e = {g: np.round(sim.exposures[g][:, keep], 2) for g in Gender}
        (path / f"{code}.Deaths_1x1.txt").write_text(_hmd_text(c, "deaths", yrs, d[Gender.female], d[Gender.male]))
        (path / f"{code}.Exposures_1x1.txt").write_text(
            _hmd_text(c, "exposures", yrs, e[Gender.female], e[Gender.male])
        )
        sims[c] = sim
    return sims


STMF_HEADER = (
    "CountryCode,Year,Week,Sex,D0_14,D15_64,D65_74,D75_84,D85p,DTotal,"
    "R0_14,R15_64,R65_74,R75_84,R85p,RTotal,Split,SplitSex,Forecast"
)
STMF_CODES = {Country.FIN: "FIN", Country.DEU: "DEUTNP", Country.ITA: "ITA", Country.NLD: "NLD", Country.USA: "USA"}
_BUCKETS = ((0, 14), (15, 64), (65, 74), (75, 84), (85, HMD_MAX_AGE))


def write_stmf(path, sims: dict, years=(2019, 2020, 2021), seed: int = 0) -> None:
    """Write weekly bucket deaths for ``years`` in STMF CSV layout (52 weeks per year)."""
    rng = np.random.default_rng(seed + 17)
    rows = [STMF_HEADER]
    weeks = np.arange(1, 53)
    season = 1.0 + 0.15 * np.cos(2 * np.pi * (weeks - 2) / 52)
    season = season / season.sum()
    for c, sim in sims.items():
        for year in years:
            j = np.flatnonzero(sim.years == year)
            if j.size == 0:
                continue
            j = j[0]
            per_sex = {}
            for g in Gender:
                annual = np.array([sim.deaths[g][lo : hi + 1, j].sum() for lo, hi in _BUCKETS])
                weekly = np.stack([rng.multinomial(int(n), season) for n in annual], axis=1).astype(float)
                per_sex[g] = weekly
            for w in range(52):
                for g, code in ((Gender.male, "m"), (Gender.female, "f")):
                    b = per_sex[g][w]
                    rows.append(
                        f"{STMF_CODES[c]},{year},{w + 1},{code},"
                        + ",".join(f"{v:.1f}" for v in b)
                        + f",{b.sum():.1f},0,0,0,0,0,0,1,1,0"
                    )
                b = per_sex[Gender.male][w] + per_sex[Gender.female][w]
                rows.append(
                    f"{STMF_CODES[c]},{year},{w + 1},b," + ",".join(f"{v:.1f}" for v in b) + f",{b.sum():.1f},0,0,0,0,0,0,1,1,0"
                )
    # a country outside the study, exercising the skip path
    rows.append("SWE,2020,1,f,1,2,3,4,5,15,0,0,0,0,0,0,1,1,0")
    Path(path).write_text("\n".join(rows) + "\n")
