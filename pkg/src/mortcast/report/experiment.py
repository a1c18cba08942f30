"""Experiment orchestration: ingest, fit, improve, forecast, evaluate, write artifacts.

A run directory holds::

    config.json        resolved configuration
    fits/*.json        one serialization per (model, subpopulation) or per GAM
    eval.csv           in-sample and out-of-sample RMSE per (subpopulation, model)
    figures/*.csv      figure data; figures/*.svg rendered from them

Artifacts are built in a sibling ``.partial`` directory and moved into place
only when every stage succeeded.
"""

from __future__ import annotations

import json
import logging
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..apc_classic import fit_apc_panel, forecast_apc
from ..data_ingest import MortalityTensor, Subpopulation, ingest
from ..gam_apc import GamConfig, GamFit, extrapolate_forecast, fit_gam, gam_predict, marginal_effects
from ..leecarter import LeeCarterFit, fit_lc_panel, forecast_lc
from ..ml_improve import (
    ForestParams,
    GbmParams,
    TreeParams,
    fit_forest,
    fit_gbm,
    fit_tree,
    forecast_ml,
    improvement_targets,
    q_surface,
)
from ..scenarios import ScenarioSpec, scenario_forecast
from .config import GAM_GROUPING, ML_MODELS, RunConfig
from .metrics import panel_rmse
from .render import render_outputs

log = logging.getLogger(__name__)

EVAL_COLUMNS = ["subpop", "model", "sample", "start", "end", "n", "rmse_rates", "rmse_deaths"]
FOCUS_AGE = 85


class StageError(RuntimeError):
    """A pipeline stage failed; ``cause`` is the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


def write_frame(df: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def load_tensor(config: RunConfig) -> MortalityTensor:
    subs = config.subpopulations
    if config.tensor:
        tensor = MortalityTensor.from_csv(config.tensor)
        missing = [s.label for s in subs if s not in tensor]
        if missing:
            raise ValueError(f"tensor lacks subpopulations {missing}")
        tensor = tensor.select(subs)
        if config.year_range:
            tensor = tensor.window(*config.year_range)
        return tensor
    return ingest(config.hmd_dir, config.stmf, subs, config.year_range)


@dataclass
class ModelResult:
    model: str
    sub: Subpopulation
    fitted: np.ndarray
    forecast: np.ndarray | None = None
    forecast_years: np.ndarray | None = None
    fit_json: dict | None = None
    q: np.ndarray | None = None


@dataclass
class RunResult:
    output_dir: Path
    eval: pd.DataFrame | None
    results: list[ModelResult] = field(default_factory=list)
    gam_fits: dict[str, GamFit] = field(default_factory=dict)


class _Run:
    """Mutable state of one run; not shared between runs."""

    def __init__(self, config: RunConfig, tensor: MortalityTensor):
        self.config = config
        self.tensor = tensor
        self.subs = config.subpopulations
        self.train = tensor.window(*config.train)
        self.test = tensor.window(*config.test) if config.test else None
        self.results: list[ModelResult] = []
        self.gam_fits: dict[str, GamFit] = {}
        self.lc: dict[Subpopulation, LeeCarterFit] = {}

    def horizon(self, sub) -> tuple[int, np.ndarray] | tuple[None, None]:
        if self.test is None:
            return None, None
        last = int(self.train[sub].years[-1])
        test_years = self.test[sub].years
        return int(test_years[-1] - last), test_years - last - 1

    def fit_lc(self):
        for sub in self.subs:
            fit = fit_lc_panel(self.train[sub], sub, self.tensor.ages)
            self.lc[sub] = fit
            res = ModelResult("lc", sub, fit.rates, fit_json=fit.to_dict())
            h, cols = self.horizon(sub)
            if h:
                fc = forecast_lc(fit, h)
                res.forecast, res.forecast_years = fc.rates[:, cols], fc.years[cols]
                res.fit_json["forecast"] = {"arima": fc.arima.to_dict(), "flags": fc.flags}
            self.results.append(res)

    def fit_apc(self):
        for sub in self.subs:
            fit = fit_apc_panel(self.train[sub], sub, self.tensor.ages)
            res = ModelResult("apc", sub, fit.rates, fit_json=fit.to_dict())
            h, cols = self.horizon(sub)
            if h:
                fc = forecast_apc(fit, h)
                res.forecast, res.forecast_years = fc.rates[:, cols], fc.years[cols]
                res.fit_json["forecast_flags"] = fc.flags
            self.results.append(res)

    def fit_ml(self, name: str):
        cfg = self.config
        for sub in self.subs:
            lcfit = self.lc[sub]
            targets = improvement_targets(self.train[sub], lcfit)
            store_trees = True
            if name == "tree":
                model = fit_tree(targets, TreeParams(**cfg.tree))
            elif name == "rf":
                opts = dict(cfg.forest)
                store_trees = bool(opts.pop("store_trees", False))
                model = fit_forest(targets, ForestParams(**{**opts, "seed": cfg.seed}))
            else:
                model = fit_gbm(targets, GbmParams(**{**cfg.gbm, "seed": cfg.seed}))
            q = q_surface(model, lcfit.ages, lcfit.years)
            rates = lcfit.rates * q
            blob = model.to_dict() if store_trees else {k: v for k, v in model.to_dict().items() if k != "trees"}
            blob.update(
                {
                    "model": name,
                    "subpopulation": sub.label,
                    "baseline": f"lc_{sub.label}.json",
                    "ages": lcfit.ages.tolist(),
                    "years": lcfit.years.tolist(),
                    "q_grid": q.tolist(),
                    "excluded_cells": targets.excluded.tolist(),
                }
            )
            res = ModelResult(name, sub, rates, fit_json=blob, q=q)
            h, cols = self.horizon(sub)
            if h:
                fc = forecast_ml(lcfit, model, h, rates=rates)
                res.forecast, res.forecast_years = fc.rates[:, cols], fc.years[cols]
                blob["forecast_flags"] = fc.flags
            self.results.append(res)

    def fit_gam(self, name: str):
        cfg = GamConfig(**_gam_kwargs(self.config.gam))
        fit = fit_gam(self.train, self.subs, GAM_GROUPING[name], cfg)
        self.gam_fits[name] = fit
        fc = None
        for sub in self.subs:
            res = ModelResult(name, sub, gam_predict(fit, sub))
            h, cols = self.horizon(sub)
            if h:
                fc = fc or extrapolate_forecast(fit, h)
                res.forecast, res.forecast_years = fc.rates[sub.label][:, cols], fc.years[cols]
            self.results.append(res)

    def evaluate(self) -> pd.DataFrame:
        rows = []
        for r in self.results:
            tr = self.train[r.sub]
            rr, rd = panel_rmse(r.fitted, tr)
            rows.append([r.sub.label, r.model, "in", int(tr.years[0]), int(tr.years[-1]), r.fitted.size, rr, rd])
            if r.forecast is not None:
                te = self.test[r.sub]
                rr, rd = panel_rmse(r.forecast, te)
                rows.append([r.sub.label, r.model, "out", int(te.years[0]), int(te.years[-1]), r.forecast.size, rr, rd])
        df = pd.DataFrame(rows, columns=EVAL_COLUMNS)
        order = {m: i for i, m in enumerate(self.config.models)}
        subs = {s.label: i for i, s in enumerate(self.subs)}
        df = df.assign(_s=df["subpop"].map(subs), _m=df["model"].map(order))
        df = df.sort_values(["_s", "_m", "sample"], kind="stable").drop(columns=["_s", "_m"])
        return df.reset_index(drop=True)


def _gam_kwargs(d: dict) -> dict:
    out = dict(d)
    for key in ("covid_years", "lams", "grid"):
        if out.get(key) is not None:
            out[key] = tuple(out[key])
    return out


def _long_grid(values: np.ndarray, ages, years) -> pd.DataFrame:
    a, t = np.meshgrid(np.asarray(ages), np.asarray(years), indexing="ij")
    return pd.DataFrame({"age": a.ravel(), "year": t.ravel(), "value": np.asarray(values).ravel()})


def _figure_data(run: _Run, figdir: Path) -> list[str]:
    written = []

    def emit(name, df):
        write_frame(df, figdir / name)
        written.append(name)

    ages = run.tensor.ages
    for sub in run.subs:
        p = run.train[sub]
        emit(f"heatmap-rates_{sub.label}.csv", _long_grid(p.rates, ages, p.years))
    for r in run.results:
        if r.q is not None:
            emit(f"heatmap-q_{r.model}_{r.sub.label}.csv", _long_grid(r.q, ages, run.train[r.sub].years))
    for name, fit in run.gam_fits.items():
        emit(f"effects_{name}.csv", marginal_effects(fit, include_covid=True).to_frame())
    if run.test is not None:
        i = int(np.flatnonzero(ages == FOCUS_AGE)[0]) if FOCUS_AGE in ages else len(ages) - 1
        for sub in run.subs:
            rows = []
            obs = run.tensor.window(run.config.train[0], run.config.test[1])[sub]
            rows.extend(("observed", int(y), float(v)) for y, v in zip(obs.years, obs.rates[i]))
            for r in run.results:
                if r.sub == sub and r.forecast is not None:
                    rows.extend((r.model, int(y), float(v)) for y, v in zip(r.forecast_years, r.forecast[i]))
            emit(f"lines_forecast-age{int(ages[i])}_{sub.label}.csv", pd.DataFrame(rows, columns=["series", "x", "y"]))
    return written


@contextmanager
def _staging(output_dir: Path):
    output_dir = Path(output_dir)
    partial = output_dir.parent / f".{output_dir.name}.partial"
    if partial.exists():
        shutil.rmtree(partial)
    partial.mkdir(parents=True)
    try:
        yield partial
    except BaseException:
        shutil.rmtree(partial, ignore_errors=True)
        raise
    if output_dir.exists():
        shutil.rmtree(output_dir)
    partial.rename(output_dir)


def run_experiment(config: RunConfig, stages=("fit", "evaluate", "figures"), tensor: MortalityTensor | None = None) -> RunResult:
    """Execute the configured pipeline and write the run directory.

    ``stages`` limits the work: ``("fit",)`` writes only ``config.json`` and
    the fit serializations. Failures raise :class:`StageError` and leave no
    partial output behind.
    """
    with stage("config"):
        config.validate()
    with _staging(Path(config.output_dir)) as out:
        _write(out / "config.json", config.to_json())
        with stage("ingest"):
            tensor = tensor if tensor is not None else load_tensor(config)
            run = _Run(config, tensor)
        with stage("fit"):
            if "lc" in config.models:
                run.fit_lc()
            for name in config.models:
                if name == "apc":
                    run.fit_apc()
                elif name in ML_MODELS:
                    run.fit_ml(name)
                elif name in GAM_GROUPING:
                    run.fit_gam(name)
        with stage("serialize"):
            for r in run.results:
                if r.fit_json is not None:
                    _write(out / "fits" / f"{r.model}_{r.sub.label}.json", _dump(r.fit_json))
            for name, fit in run.gam_fits.items():
                _write(out / "fits" / f"{name}.json", _dump(fit.to_dict()))
        df = None
        if "evaluate" in stages:
            with stage("evaluate"):
                df = run.evaluate()
                write_frame(df, out / "eval.csv")
        if "figures" in stages and config.figures:
            with stage("figures"):
                names = _figure_data(run, out / "figures")
                _write(out / "figures" / "manifest.json", _dump(sorted(names)))
                render_outputs(out)
    return RunResult(Path(config.output_dir), df, run.results, run.gam_fits)


def run_scenario(config: RunConfig, kind: str, tensor: MortalityTensor | None = None):
    """One COVID scenario run: fit, project, write the scenario CSV and age-85 charts."""
    opts = dict(config.scenario)
    grouping = opts.pop("grouping", "pooled-all")
    opts.pop("kind", None)
    with stage("config"):
        config.validate()
        spec = ScenarioSpec(kind, **opts)
        config.scenario = {**config.scenario, "kind": kind}
    with _staging(Path(config.output_dir)) as out:
        _write(out / "config.json", config.to_json())
        with stage("ingest"):
            tensor = tensor if tensor is not None else load_tensor(config)
        with stage("fit"):
            gam_cfg = GamConfig(**_gam_kwargs({k: v for k, v in config.gam.items() if k != "covid_years"}))
            result = scenario_forecast(tensor, spec, config.subpopulations, grouping, gam_cfg)
        name = f"gam-scenario-{kind}"
        with stage("serialize"):
            blob = result.fit.to_dict()
            blob["scenario"] = {
                "kind": kind,
                "cutoff": spec.training_cutoff,
                "rho": spec.rho,
                "years": result.years.tolist(),
                "covid_path": {k: v.tolist() for k, v in result.covid_path.items()},
                "flags": result.flags,
            }
            if result.overlay is not None:
                blob["scenario"]["overlay"] = {k: v.tolist() for k, v in result.overlay.overlay.items()}
            _write(out / "fits" / f"{name}.json", _dump(blob))
        with stage("evaluate"):
            rows = []
            train = tensor.window(spec.start, spec.training_cutoff)
            for sub in result.fit.subpops:
                p = train[sub]
                rr, rd = panel_rmse(gam_predict(result.fit, sub), p)
                rows.append([sub.label, name, "in", int(p.years[0]), int(p.years[-1]), p.deaths.size, rr, rd])
            df = pd.DataFrame(rows, columns=EVAL_COLUMNS)
            write_frame(df, out / "eval.csv")
        if config.figures:
            with stage("figures"):
                figdir = out / "figures"
                names = [f"scenario_{kind}.csv"]
                write_frame(result.to_frame(), figdir / names[0])
                ages = result.fit.ages
                i = int(np.flatnonzero(ages == FOCUS_AGE)[0]) if FOCUS_AGE in ages else len(ages) - 1
                hist = tensor.window(spec.start, max(spec.covid_years))
                for sub in result.fit.subpops:
                    p = hist[sub]
                    rows = [("observed", int(y), float(v)) for y, v in zip(p.years, p.rates[i])]
                    rows += [(f"scenario {kind}", int(y), float(v)) for y, v in zip(result.years, result.rates[sub.label][i])]
                    nm = f"lines_scenario-{kind}-age{int(ages[i])}_{sub.label}.csv"
                    write_frame(pd.DataFrame(rows, columns=["series", "x", "y"]), figdir / nm)
                    names.append(nm)
                _write(figdir / "manifest.json", _dump(sorted(names)))
                render_outputs(out)
    return result
