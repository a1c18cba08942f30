import json
import re
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mortcast.apc_classic import ApcFit, forecast_apc
from mortcast.data_ingest import MortalityTensor, Subpopulation
from mortcast.gam_apc import GamFit, extrapolate_forecast, gam_predict
from mortcast.leecarter import LeeCarterFit, forecast_lc
from mortcast.ml_improve.pipeline import forecast_log_rates
from mortcast.report import ConfigError, RunConfig, StageError, panel_rmse, render_outputs, rmse, run_experiment
from mortcast.report.svg import heatmap_svg, line_chart_svg

SUBS = ["FIN_male", "USA_female"]


def test_rmse_examples():
    x = np.arange(6.0).reshape(2, 3)
    assert rmse(x, x) == 0.0
    assert rmse(x + 0.25, x) == pytest.approx(0.25)
    assert rmse(np.array([[1.0, -1.0], [2.0, -2.0]]), np.zeros((2, 2))) == pytest.approx(np.sqrt(10 / 4))
    with pytest.raises(ValueError):
        rmse(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        rmse(x, x, scale="logs")


def test_deaths_scale_uses_exposures():
    mu = np.array([[0.01, 0.02]])
    E = np.array([[100.0, 50.0]])
    D = np.array([[2.0, 1.0]])
    # expected deaths are 1 and 1
    assert rmse(mu, D, "deaths", E) == pytest.approx(np.sqrt(0.5))


@settings(max_examples=100, deadline=None)
@given(arrays(float, (3, 4), elements=st.floats(-10, 10)), arrays(float, (3, 4), elements=st.floats(-10, 10)))
def test_rmse_properties(a, b):
    assert rmse(a, a) == 0
    r = rmse(a, b)
    assert r >= 0
    assert r == pytest.approx(rmse(b, a))
    # flipping the sign of every error leaves the metric unchanged
    assert r == pytest.approx(rmse(2 * b - a, b))
    assert (r == 0) == np.array_equal(a, b)


def base_config(tmp_path, tensor_csv, **kw):
    d = dict(
        output_dir=str(tmp_path / "run"),
        tensor=str(tensor_csv),
        subpops=SUBS,
        models=["lc", "apc", "tree", "rf", "gbm", "gam-pooled"],
        train=[1990, 2010],
        test=[2011, 2014],
        forest={"n_trees": 20},
        gbm={"n_iter": 40},
    )
    d.update(kw)
    return RunConfig.from_dict(d, env={})


@pytest.fixture(scope="module")
def tensor_csv(synthetic_tensor, tmp_path_factory):
    path = tmp_path_factory.mktemp("tensor") / "tensor.csv"
    subs = [Subpopulation.parse(s) for s in SUBS]
    synthetic_tensor.select(subs).window(1985, 2019).to_csv(path)
    return path


@pytest.fixture(scope="module")
def run(tensor_csv, tmp_path_factory):
    cfg = base_config(tmp_path_factory.mktemp("exp"), tensor_csv)
    return cfg, run_experiment(cfg)


def test_config_validation(tmp_path, tensor_csv):
    with pytest.raises(ConfigError):
        base_config(tmp_path, tensor_csv, test=[2005, 2012]).validate()
    with pytest.raises(ConfigError):
        base_config(tmp_path, tensor_csv, train=[2010, 1990])
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"output_dir": "x", "colour": "red"})
    with pytest.raises(ConfigError):
        base_config(tmp_path, tensor_csv, models=["gbm"]).validate()
    with pytest.raises(ConfigError):
        base_config(tmp_path, tensor_csv, subpops=["FIN_other"]).validate()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"output_dir": "x", "tensor": "t.csv"}, env={"MORTCAST_SEED": "abc"})
    assert RunConfig.from_dict({"output_dir": "x", "seed": 3}, env={"MORTCAST_SEED": "11"}).seed == 11


def test_rejected_before_any_computation(tmp_path, tensor_csv):
    cfg = base_config(tmp_path, tensor_csv, test=[2000, 2003])
    with pytest.raises(StageError) as info:
        run_experiment(cfg)
    assert info.value.stage == "config"
    assert not Path(cfg.output_dir).exists()
    assert list(tmp_path.iterdir()) == []


def test_stage_failure_leaves_nothing(tmp_path, tensor_csv):
    cfg = base_config(tmp_path, tensor_csv, models=["lc", "gam-pooled"], gam={"lams": [1.0, 1.0], "max_iter": 1})
    with pytest.raises(StageError) as info:
        run_experiment(cfg)
    assert info.value.stage == "fit"
    assert list(tmp_path.iterdir()) == []


def test_run_directory_layout(run):
    cfg, res = run
    out = Path(cfg.output_dir)
    assert json.loads((out / "config.json").read_text()) == cfg.to_dict()
    names = {p.name for p in (out / "fits").iterdir()}
    for m in ("lc", "apc", "tree", "rf", "gbm"):
        assert {f"{m}_{s}.json" for s in SUBS} <= names
    assert "gam-pooled.json" in names
    ev = pd.read_csv(out / "eval.csv")
    assert len(ev) == 2 * 6 * 2
    assert (ev[["rmse_rates", "rmse_deaths"]] >= 0).all().all()
    manifest = json.loads((out / "figures" / "manifest.json").read_text())
    for name in manifest:
        assert (out / "figures" / name).exists()
    assert any(p.suffix == ".svg" for p in (out / "figures").iterdir())


def test_eval_reconstructible_from_fits(run):
    cfg, res = run
    out = Path(cfg.output_dir)
    ev = pd.read_csv(out / "eval.csv", float_precision="round_trip").set_index(["subpop", "model", "sample"])
    tensor = MortalityTensor.from_csv(cfg.tensor)
    train, test = tensor.window(*cfg.train), tensor.window(*cfg.test)
    gam = GamFit.from_dict(json.loads((out / "fits" / "gam-pooled.json").read_text()))

    def check(label, model, fitted, forecast):
        sub = Subpopulation.parse(label)
        for sample, surface, panel in (("in", fitted, train[sub]), ("out", forecast, test[sub])):
            row = ev.loc[(label, model, sample)]
            rr, rd = panel_rmse(surface, panel)
            assert float(row["rmse_rates"]) == rr
            assert float(row["rmse_deaths"]) == rd

    for label in SUBS:
        blob = json.loads((out / "fits" / f"lc_{label}.json").read_text())
        lc = LeeCarterFit.from_dict(blob)
        check(label, "lc", lc.rates, forecast_lc(lc, 4).rates)
        apc = ApcFit.from_dict(json.loads((out / "fits" / f"apc_{label}.json").read_text()))
        check(label, "apc", apc.rates, forecast_apc(apc, 4).rates)
        for m in ("tree", "rf", "gbm"):
            blob = json.loads((out / "fits" / f"{m}_{label}.json").read_text())
            assert blob["baseline"] == f"lc_{label}.json"
            rates = lc.rates * np.asarray(blob["q_grid"])
            fc, _, _ = forecast_log_rates(np.log(rates), 4)
            check(label, m, rates, np.exp(fc))
        sub = Subpopulation.parse(label)
        check(label, "gam-pooled", gam_predict(gam, sub), extrapolate_forecast(gam, 4).rates[label])


def test_fit_stage_only(tmp_path, tensor_csv):
    cfg = base_config(tmp_path, tensor_csv, models=["lc"])
    res = run_experiment(cfg, stages=("fit",))
    out = Path(cfg.output_dir)
    assert res.eval is None
    assert sorted(p.name for p in out.iterdir()) == ["config.json", "fits"]


def test_white_heatmap_for_unit_surface():
    svg = heatmap_svg(np.ones((4, 5)), list(range(4)), list(range(2000, 2005)), "q", diverging=True)
    cells = re.findall(r'<rect x="[\d.]+" y="[\d.]+" width="[\d.]+" height="[\d.]+" fill="(#[0-9a-f]{6})"/>', svg)
    assert len(cells) >= 20
    assert set(cells[: 4 * 5 + 1]) == {"#ffffff"}


def test_below_one_is_purple_half():
    svg = heatmap_svg(np.array([[0.8, 1.25]]), [0], [2000, 2001], diverging=True)
    fills = re.findall(r'fill="(#[0-9a-f]{6})"', svg)
    low, high = fills[1], fills[2]
    r, g, b = (int(low[i : i + 2], 16) for i in (1, 3, 5))
    assert b > r  # purple side
    r, g, b = (int(high[i : i + 2], 16) for i in (1, 3, 5))
    assert r > b  # orange side


def test_flat_effect_on_reference_line():
    svg = line_chart_svg({"s": ([1, 2, 3], [1.0, 1.0, 1.0])}, reference=1.0)
    ref = re.search(r'<line x1="[\d.]+" y1="([\d.]+)" x2="[\d.]+" y2="([\d.]+)"', svg)
    pts = re.search(r'<polyline points="([^"]+)"', svg).group(1)
    ys = {p.split(",")[1] for p in pts.split()}
    assert ys == {ref.group(1)} == {ref.group(2)}


def test_render_missing_inputs(tmp_path):
    figdir = tmp_path / "figures"
    figdir.mkdir()
    pd.DataFrame({"age": [0, 0], "year": [2000, 2001], "value": [1.0, 1.1]}).to_csv(figdir / "heatmap-q_x.csv", index=False)
    (figdir / "manifest.json").write_text(json.dumps(["heatmap-q_x.csv", "heatmap-q_gone.csv"]))
    rep = render_outputs(tmp_path)
    assert rep.written == ["heatmap-q_x.svg"]
    assert rep.missing == ["heatmap-q_gone.csv"]
    first = (figdir / "heatmap-q_x.svg").read_bytes()
    render_outputs(tmp_path)
    assert (figdir / "heatmap-q_x.svg").read_bytes() == first
