"""Ingestion of HMD 1x1 tables and STMF weekly files into mortality tensors.

The tensor is the single input of every model in the package. It holds
deaths and exposures on an ``age x year`` grid for each subpopulation
(country and gender), together with a per-year source tag telling whether a
year came from HMD directly or was derived from STMF weekly counts.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MAX_AGE = 90
HMD_MAX_AGE = 110
REFERENCE_YEAR = 2019
STMF_BUCKETS = ((0, 14), (15, 64), (65, 74), (75, 84), (85, MAX_AGE))
STMF_DEATH_COLUMNS = ("D0_14", "D15_64", "D65_74", "D75_84", "D85p")
MAX_MISSING_RUN = 3


class ParseError(ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class StructureError(ValueError):
    pass


class AssemblyError(ValueError):
    pass


class Country(str, Enum):
    FIN = "FIN"
    DEU = "DEU"
    ITA = "ITA"
    NLD = "NLD"
    USA = "USA"


class Gender(str, Enum):
    female = "female"
    male = "male"


COUNTRY_ORDER = {c: i for i, c in enumerate(Country)}
GENDER_ORDER = {g: i for i, g in enumerate(Gender)}

# STMF and HMD use a few codes that differ from the short enum values
COUNTRY_ALIASES = {
    "FIN": Country.FIN,
    "DEU": Country.DEU,
    "DEUTNP": Country.DEU,
    "ITA": Country.ITA,
    "NLD": Country.NLD,
    "USA": Country.USA,
}


@dataclass(frozen=True, order=False)
class Subpopulation:
    country: Country
    gender: Gender

    def __post_init__(self):
        object.__setattr__(self, "country", Country(self.country))
        object.__setattr__(self, "gender", Gender(self.gender))

    @property
    def label(self) -> str:
        return f"{self.country.value}_{self.gender.value}"

    @classmethod
    def parse(cls, label: str) -> "Subpopulation":
        country, gender = label.split("_")
        return cls(Country(country), Gender(gender))

    def sort_key(self):
        return COUNTRY_ORDER[self.country], GENDER_ORDER[self.gender]

    def __str__(self):
        return self.label


def all_subpopulations() -> list[Subpopulation]:
    return [Subpopulation(c, g) for c in Country for g in Gender]


@dataclass
class Panel:
    """Deaths and exposures of one subpopulation on an ``(age, year)`` grid."""

    years: np.ndarray
    deaths: np.ndarray
    exposures: np.ndarray
    source: tuple[str, ...]

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        self.deaths = np.asarray(self.deaths, dtype=float)
        self.exposures = np.asarray(self.exposures, dtype=float)
        self.source = tuple(self.source)

    @property
    def rates(self) -> np.ndarray:
        return self.deaths / self.exposures

    def window(self, start: int, end: int) -> "Panel":
        mask = (self.years >= start) & (self.years <= end)
        if not mask.any():
            raise AssemblyError(f"no years in window {start}-{end}")
        idx = np.flatnonzero(mask)
        return Panel(
            self.years[idx],
            self.deaths[:, idx],
            self.exposures[:, idx],
            tuple(self.source[i] for i in idx),
        )


@dataclass
class MortalityTensor:
    ages: np.ndarray
    panels: dict[Subpopulation, Panel]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ages = np.asarray(self.ages, dtype=int)
        self.panels = dict(sorted(self.panels.items(), key=lambda kv: kv[0].sort_key()))

    @property
    def subpopulations(self) -> list[Subpopulation]:
        return list(self.panels)

    def __getitem__(self, sub: Subpopulation) -> Panel:
        return self.panels[sub]

    def __contains__(self, sub) -> bool:
        return sub in self.panels

    def validate(self) -> None:
        """Raise if any tensor invariant is violated."""
        for sub, p in self.panels.items():
            shape = (len(self.ages), len(p.years))
            if p.deaths.shape != shape or p.exposures.shape != shape:
                raise AssemblyError(f"{sub}: array shape mismatch, expected {shape}")
            if len(p.source) != len(p.years):
                raise AssemblyError(f"{sub}: source tags do not match years")
            if not np.all(np.isfinite(p.deaths)) or np.any(p.deaths < 0):
                raise AssemblyError(f"{sub}: deaths must be finite and >= 0")
            if not np.all(np.isfinite(p.exposures)) or np.any(p.exposures <= 0):
                raise AssemblyError(f"{sub}: exposures must be finite and > 0")
            gaps = np.flatnonzero(np.diff(p.years) != 1)
            if gaps.size:
                y = p.years[gaps[0]]
                raise AssemblyError(f"{sub}: year coverage gap after {y}")

    def select(self, subpops: Iterable[Subpopulation]) -> "MortalityTensor":
        return MortalityTensor(self.ages, {s: self.panels[s] for s in subpops}, dict(self.metadata))

    def window(
        self, start: int, end: int, overrides: Mapping[Subpopulation, tuple[int, int]] | None = None
    ) -> "MortalityTensor":
        """Restrict every panel to ``[start, end]``; ``overrides`` sets per-subpopulation windows."""
        overrides = overrides or {}
        panels = {}
        for sub, p in self.panels.items():
            lo, hi = overrides.get(sub, (start, end))
            lo = max(lo, int(p.years[0]))
            panels[sub] = p.window(lo, hi)
        return MortalityTensor(self.ages, panels, dict(self.metadata))

    # canonical interchange format

    def to_csv(self, path_or_buf=None) -> str | None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["country", "gender", "year", "age", "deaths", "exposures", "source"])
        for sub, p in self.panels.items():
            for j, year in enumerate(p.years):
                for i, age in enumerate(self.ages):
                    writer.writerow(
                        [
                            sub.country.value,
                            sub.gender.value,
                            int(year),
                            int(age),
                            repr(float(p.deaths[i, j])),
                            repr(float(p.exposures[i, j])),
                            p.source[j],
                        ]
                    )
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        Path(path_or_buf).write_text(text, encoding="utf-8", newline="")
        return None

    @classmethod
    def from_csv(cls, path) -> "MortalityTensor":
        return cls.parse_csv(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def parse_csv(cls, text: str) -> "MortalityTensor":
        df = pd.read_csv(
            io.StringIO(text),
            dtype={"country": str, "gender": str, "year": int, "age": int, "source": str},
            converters={"deaths": float, "exposures": float},
        )
        ages = np.sort(df["age"].unique())
        panels = {}
        for (country, gender), g in df.groupby(["country", "gender"], sort=False):
            sub = Subpopulation(Country(country), Gender(gender))
            years = np.sort(g["year"].unique())
            g = g.sort_values(["year", "age"])
            shape = (len(years), len(ages))
            deaths = g["deaths"].to_numpy().reshape(shape).T.copy()
            expo = g["exposures"].to_numpy().reshape(shape).T.copy()
            src = tuple(g.groupby("year", sort=True)["source"].first())
            panels[sub] = Panel(years, deaths, expo, src)
        tensor = cls(ages, panels)
        tensor.validate()
        return tensor


# --------------------------------------------------------------------------
# HMD


def parse_hmd(content: str, kind: str = "deaths") -> pd.DataFrame:
    """Parse an HMD 1x1 table (``Deaths_1x1`` or ``Exposures_1x1``).

    Returns a long table with columns ``year, age, gender, value``; missing
    values (``"."``) are NaN. The ``Total`` column is dropped.
    """
    if kind not in ("deaths", "exposures"):
        raise ValueError(f"kind must be 'deaths' or 'exposures', got {kind!r}")
    lines = content.splitlines()
    start = None
    for i, line in enumerate(lines):
        tokens = line.split()
        if len(tokens) >= 2 and tokens[0] == "Year" and tokens[1] == "Age":
            start = i + 1
            break
    if start is None:
        start = 2

    rows = []
    prev_year, prev_age = None, None
    for lineno, line in enumerate(lines[start:], start=start + 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise ParseError(f"expected 5 columns, got {len(tokens)}", lineno)
        year_tok, age_tok, f_tok, m_tok, _ = tokens
        try:
            # HMD marks territorial changes with a trailing +/- on the year
            year = int(year_tok.rstrip("+-"))
            age = HMD_MAX_AGE if age_tok == "110+" else int(age_tok)
            female = math.nan if f_tok == "." else float(f_tok)
            male = math.nan if m_tok == "." else float(m_tok)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if prev_year is not None:
            if year < prev_year:
                raise StructureError(f"line {lineno}: year {year} after {prev_year}")
            if year == prev_year and age <= prev_age:
                raise StructureError(f"line {lineno}: age {age} not increasing within {year}")
        prev_year, prev_age = year, age
        rows.append((year, age, "female", female))
        rows.append((year, age, "male", male))
    return pd.DataFrame(rows, columns=["year", "age", "gender", "value"])


def _impute_ages(values: np.ndarray, ages: np.ndarray, label: str) -> np.ndarray:
    missing = np.isnan(values)
    if not missing.any():
        return values
    run = 0
    for m in missing:
        run = run + 1 if m else 0
        if run > MAX_MISSING_RUN:
            raise StructureError(f"{label}: more than {MAX_MISSING_RUN} consecutive missing ages")
    if missing.all():
        raise StructureError(f"{label}: all ages missing")
    out = values.copy()
    out[missing] = np.interp(ages[missing], ages[~missing], values[~missing])
    return out


def hmd_matrix(
    table: pd.DataFrame, gender: Gender | str, max_age: int = MAX_AGE
) -> tuple[np.ndarray, np.ndarray]:
    """Pivot a parsed HMD table to ``(years, values[age, year])`` for ages ``0..max_age``.

    Missing cells are imputed by linear interpolation across adjacent ages.
    """
    gender = Gender(gender)
    g = table[table["gender"] == gender.value]
    wide = g.pivot(index="age", columns="year", values="value").sort_index()
    wide = wide.loc[wide.index <= max_age]
    ages = wide.index.to_numpy()
    years = wide.columns.to_numpy().astype(int)
    values = wide.to_numpy(dtype=float)
    for j, year in enumerate(years):
        values[:, j] = _impute_ages(values[:, j], ages, f"{gender.value} {year}")
    return years, values


# --------------------------------------------------------------------------
# STMF


@dataclass(frozen=True)
class StmfWeeklyRecord:
    country: Country
    year: int
    week: int
    sex: Gender
    buckets: tuple[float, float, float, float, float]
    total: float


def parse_stmf(content: str) -> list[StmfWeeklyRecord]:
    """Parse an STMF CSV, keeping female and male rows of known countries.

    Rows with unknown country codes are skipped; the number skipped is
    reported through a single ``UserWarning``.
    """
    reader = csv.DictReader(io.StringIO(content.lstrip("﻿")))
    required = {"CountryCode", "Year", "Week", "Sex", "DTotal", *STMF_DEATH_COLUMNS}
    missing = required - set(reader.fieldnames or ())
    if missing:
        raise ParseError(f"STMF header missing columns {sorted(missing)}", 1)
    records = []
    skipped = 0
    for lineno, row in enumerate(reader, start=2):
        sex = row["Sex"].strip().lower()
        if sex == "b":
            continue
        code = row["CountryCode"].strip()
        if code not in COUNTRY_ALIASES:
            skipped += 1
            continue
        try:
            year = int(row["Year"])
            week = int(row["Week"])
            buckets = tuple(float(row[c]) for c in STMF_DEATH_COLUMNS)
            total = float(row["DTotal"])
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), lineno) from None
        if not 1 <= week <= 53:
            raise ParseError(f"week {week} outside 1..53", lineno)
        if sex not in ("f", "m"):
            raise ParseError(f"unknown sex code {sex!r}", lineno)
        if total > 0 and abs(sum(buckets) - total) > 0.005 * total:
            raise ParseError(f"bucket deaths {sum(buckets)} do not sum to total {total}", lineno)
        records.append(
            StmfWeeklyRecord(
                COUNTRY_ALIASES[code],
                year,
                week,
                Gender.female if sex == "f" else Gender.male,
                buckets,
                total,
            )
        )
    if skipped:
        warnings.warn(f"skipped {skipped} STMF rows with unknown country codes", UserWarning)
    return records


@dataclass
class AnnualizedDeaths:
    """Annual individual-age deaths derived from STMF buckets for one country and year."""

    country: Country
    year: int
    ages: np.ndarray
    deaths: dict[Gender, np.ndarray]
    bucket_totals: dict[Gender, np.ndarray]
    dropped_tail: dict[Gender, float]
    fallback_buckets: dict[Gender, list[int]]
    method: str = "proportional-reference-profile"


def split_bucket(total: float, profile: np.ndarray) -> tuple[np.ndarray, bool]:
    """Distribute ``total`` proportionally to ``profile``; uniform if the profile is all zero."""
    profile = np.asarray(profile, dtype=float)
    s = profile.sum()
    if s <= 0:
        return np.full(profile.shape, total / profile.size), True
    return total * profile / s, False


def annualize_stmf(
    records: Sequence[StmfWeeklyRecord],
    profile: Mapping[Gender, np.ndarray],
    target_year: int,
    country: Country | str | None = None,
    max_age: int = MAX_AGE,
) -> AnnualizedDeaths:
    """Turn weekly STMF bucket deaths of one country-year into individual-age deaths.

    Parameters
    ----------
    records : sequence of StmfWeeklyRecord
        Weekly records; those not matching ``country``/``target_year`` are ignored.
    profile : mapping Gender -> array
        Reference-year deaths by single age starting at age 0. When the
        profile extends past ``max_age`` the 85+ bucket is split over all
        profile ages and the share above ``max_age`` is reported in
        ``dropped_tail``; otherwise the bucket is rescaled onto ``85..max_age``.
    """
    if country is None:
        countries = {r.country for r in records if r.year == target_year}
        if len(countries) != 1:
            raise ValueError("records span several countries; pass country=")
        country = countries.pop()
    country = Country(country)
    ages = np.arange(max_age + 1)
    out = {}
    totals = {}
    tails = {}
    fallbacks = {}
    for gender in Gender:
        recs = [r for r in records if r.country == country and r.year == target_year and r.sex == gender]
        if not recs:
            continue
        bucket_tot = np.zeros(len(STMF_BUCKETS))
        for r in sorted(recs, key=lambda r: r.week):
            bucket_tot += np.asarray(r.buckets)
        prof = np.asarray(profile[gender], dtype=float)
        deaths = np.zeros(max_age + 1)
        tail = 0.0
        flagged = []
        for b, (lo, hi) in enumerate(STMF_BUCKETS):
            is_open = b == len(STMF_BUCKETS) - 1
            top = len(prof) - 1 if is_open and len(prof) - 1 > max_age else hi
            part, fell_back = split_bucket(bucket_tot[b], prof[lo : top + 1])
            if fell_back:
                flagged.append(b)
            deaths[lo : hi + 1] = part[: hi - lo + 1]
            tail += float(part[hi - lo + 1 :].sum())
        out[gender] = deaths
        totals[gender] = bucket_tot
        tails[gender] = tail
        fallbacks[gender] = flagged
    if not out:
        raise ValueError(f"no STMF records for {country.value} {target_year}")
    return AnnualizedDeaths(country, target_year, ages, out, totals, tails, fallbacks)


# --------------------------------------------------------------------------
# assembly


@dataclass
class HmdCountry:
    """Parsed HMD deaths and exposures tables for one country."""

    deaths: pd.DataFrame
    exposures: pd.DataFrame

    def panel(self, gender: Gender, max_age: int = MAX_AGE):
        yd, d = hmd_matrix(self.deaths, gender, max_age)
        ye, e = hmd_matrix(self.exposures, gender, max_age)
        if not np.array_equal(yd, ye):
            raise AssemblyError("deaths and exposures cover different years")
        return yd, d, e

    def profile(self, year: int) -> dict[Gender, np.ndarray]:
        """Full-age reference death profile for ``year``."""
        prof = {}
        for gender in Gender:
            years, values = hmd_matrix(self.deaths, gender, HMD_MAX_AGE)
            j = np.flatnonzero(years == year)
            if j.size == 0:
                raise AssemblyError(f"reference year {year} not in HMD table")
            prof[gender] = values[:, j[0]]
        return prof


def extrapolate_exposures(exposures: np.ndarray, horizon: int, window: int = 5) -> np.ndarray:
    """Carry the last exposure column forward by mean total-exposure growth over ``window`` years."""
    totals = exposures.sum(axis=0)
    k = min(window, len(totals) - 1)
    if k >= 1:
        growth = (totals[-1] / totals[-1 - k]) ** (1.0 / k)
    else:
        growth = 1.0
    steps = growth ** np.arange(1, horizon + 1)
    return exposures[:, -1:] * steps[None, :]


def build_tensor(
    hmd: Mapping[Country, HmdCountry],
    stmf: Mapping[tuple[Country, int], AnnualizedDeaths] | None = None,
    subpops: Iterable[Subpopulation] | None = None,
    year_range: tuple[int, int] | None = None,
    max_age: int = MAX_AGE,
) -> MortalityTensor:
    """Assemble a validated tensor from HMD tables plus STMF-derived years.

    Years up to the last HMD year come from HMD. Later years in
    ``year_range`` take STMF-derived deaths and extrapolated exposures.
    Panels start at ``max(year_range[0], first HMD year)``.
    """
    stmf = stmf or {}
    subpops = list(subpops) if subpops is not None else all_subpopulations()
    panels = {}
    derived = {}
    for sub in subpops:
        if sub.country not in hmd:
            raise AssemblyError(f"no HMD data for {sub.country.value}")
        years, deaths, expo = hmd[sub.country].panel(sub.gender, max_age)
        lo = int(years[0]) if year_range is None else max(year_range[0], int(years[0]))
        hi = int(years[-1]) if year_range is None else year_range[1]
        gaps = np.flatnonzero(np.diff(years) != 1)
        if gaps.size:
            raise AssemblyError(f"{sub}: HMD gap after {years[gaps[0]]}")
        keep = (years >= lo) & (years <= hi)
        years, deaths, expo = years[keep], deaths[:, keep], expo[:, keep]
        source = ["HMD"] * len(years)
        last = int(years[-1]) if len(years) else lo - 1
        extra = list(range(last + 1, hi + 1))
        if extra:
            cols = []
            for y in extra:
                ann = stmf.get((sub.country, y))
                if ann is None or sub.gender not in ann.deaths:
                    raise AssemblyError(f"{sub}: year {y} missing from HMD and STMF (gap)")
                cols.append(ann.deaths[sub.gender][: max_age + 1])
                derived[(sub.label, y)] = {
                    "method": ann.method,
                    "dropped_tail": ann.dropped_tail[sub.gender],
                    "fallback_buckets": ann.fallback_buckets[sub.gender],
                }
            new_expo = extrapolate_exposures(expo, len(extra))
            deaths = np.hstack([deaths, np.column_stack(cols)])
            expo = np.hstack([expo, new_expo])
            years = np.concatenate([years, extra])
            source += ["STMF-derived"] * len(extra)
        panels[sub] = Panel(years, deaths, expo, tuple(source))
    tensor = MortalityTensor(np.arange(max_age + 1), panels, {"stmf_derived": derived})
    tensor.validate()
    return tensor


# file-level helpers

HMD_COUNTRY_FILES = {
    Country.FIN: "FIN",
    Country.DEU: "DEUTNP",
    Country.ITA: "ITA",
    Country.NLD: "NLD",
    Country.USA: "USA",
}


def load_hmd_dir(hmd_dir: str | Path, countries: Iterable[Country] | None = None) -> dict[Country, HmdCountry]:
    """Read ``<CODE>.Deaths_1x1.txt`` and ``<CODE>.Exposures_1x1.txt`` files from a directory.

    Both the bare HMD code (``DEUTNP``) and the enum value (``DEU``) are
    accepted as file prefixes.
    """
    hmd_dir = Path(hmd_dir)
    countries = list(countries) if countries is not None else list(Country)
    out = {}
    for c in countries:
        for prefix in dict.fromkeys((HMD_COUNTRY_FILES[c], c.value)):
            dpath = hmd_dir / f"{prefix}.Deaths_1x1.txt"
            epath = hmd_dir / f"{prefix}.Exposures_1x1.txt"
            if dpath.exists() and epath.exists():
                out[c] = HmdCountry(
                    parse_hmd(dpath.read_text(encoding="utf-8", errors="replace"), "deaths"),
                    parse_hmd(epath.read_text(encoding="utf-8", errors="replace"), "exposures"),
                )
                break
    return out


def ingest(
    hmd_dir: str | Path,
    stmf_path: str | Path | None = None,
    subpops: Iterable[Subpopulation] | None = None,
    year_range: tuple[int, int] | None = None,
    reference_year: int = REFERENCE_YEAR,
) -> MortalityTensor:
    """Read a directory of HMD files and an optional STMF CSV into a tensor."""
    subpops = list(subpops) if subpops is not None else all_subpopulations()
    hmd = load_hmd_dir(hmd_dir, {s.country for s in subpops})
    missing = {s.country for s in subpops} - set(hmd)
    if missing:
        raise AssemblyError(f"HMD files not found for {sorted(c.value for c in missing)}")
    stmf = {}
    if stmf_path is not None and year_range is not None:
        records = parse_stmf(Path(stmf_path).read_text(encoding="utf-8"))
        for c in {s.country for s in subpops}:
            years = np.unique(hmd[c].deaths["year"])
            for y in range(int(years.max()) + 1, year_range[1] + 1):
                if any(r.country == c and r.year == y for r in records):
                    stmf[(c, y)] = annualize_stmf(records, hmd[c].profile(reference_year), y, c)
    return build_tensor(hmd, stmf, subpops, year_range)


def heatmap_grid(tensor: MortalityTensor, sub: Subpopulation) -> pd.DataFrame:
    """Observed-rate grid (ages as rows, years as columns) for heatmap rendering."""
    p = tensor[sub]
    return pd.DataFrame(p.rates, index=pd.Index(tensor.ages, name="age"), columns=p.years)
