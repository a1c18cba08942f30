import json
import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest

from mortcast.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, main
from mortcast.data_ingest import MortalityTensor


@pytest.fixture(scope="module")
def workdir(synthetic_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    tensor = root / "tensor.csv"
    with pytest.warns(UserWarning, match="unknown country"):
        code = main(
            ["ingest", "--hmd-dir", str(synthetic_dir / "hmd"), "--stmf", str(synthetic_dir / "stmf.csv"),
             "--out", str(tensor), "--years", "1985", "2021", "--subpops", "FIN_female", "ITA_male"]
        )
    assert code == EXIT_OK
    cfg = {
        "output_dir": "run",
        "tensor": "tensor.csv",
        "subpops": ["FIN_female", "ITA_male"],
        "models": ["lc", "tree"],
        "train": [1990, 2010],
        "test": [2011, 2013],
    }
    (root / "config.json").write_text(json.dumps(cfg))
    return root


def test_ingest_writes_tensor(workdir):
    t = MortalityTensor.from_csv(workdir / "tensor.csv")
    assert sorted(s.label for s in t.subpopulations) == ["FIN_female", "ITA_male"]
    assert t.window(2020, 2021)  # pandemic years come from the weekly file


def test_evaluate_then_report(workdir, capsys):
    out = workdir / "ev"
    assert main(["evaluate", "--config", str(workdir / "config.json"), "--output-dir", str(out)]) == EXIT_OK
    ev = pd.read_csv(out / "eval.csv")
    assert set(ev["model"]) == {"lc", "tree"}
    assert main(["report", str(out)]) == EXIT_OK
    assert main(["report", str(out), "--strict"]) == EXIT_OK
    (out / "figures" / json.loads((out / "figures" / "manifest.json").read_text())[0]).unlink()
    assert main(["report", str(out)]) == EXIT_OK
    assert main(["report", str(out), "--strict"]) == EXIT_INVALID
    assert "missing figure inputs" in capsys.readouterr().err


def test_fit_only(workdir):
    out = workdir / "fit"
    assert main(["fit", "--config", str(workdir / "config.json"), "--output-dir", str(out), "--seed", "4"]) == EXIT_OK
    assert json.loads((out / "config.json").read_text())["seed"] == 4
    assert not (out / "eval.csv").exists()


def test_invalid_input_exit_one(workdir, tmp_path, capsys):
    cfg = workdir / "config.json"
    assert main(["evaluate", "--config", str(tmp_path / "nope.json")]) == EXIT_INVALID
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["evaluate", "--config", str(bad)]) == EXIT_INVALID
    assert main(["evaluate", "--config", str(cfg), "--set", "colour=red"]) == EXIT_INVALID
    assert main(["evaluate", "--config", str(cfg), "--set", "test=[2000,2005]", "--output-dir", str(tmp_path / "o")]) == EXIT_INVALID
    assert "stage config failed" in capsys.readouterr().err
    assert main(["evaluate", "--config", str(cfg), "--set", "noequals"]) == EXIT_INVALID
    assert main(["ingest", "--hmd-dir", str(tmp_path), "--out", str(tmp_path / "t.csv")]) == EXIT_INVALID
    assert not (tmp_path / "o").exists()


def test_numerical_failure_exit_two(workdir, tmp_path, capsys):
    code = main(
        ["evaluate", "--config", str(workdir / "config.json"), "--output-dir", str(tmp_path / "g"),
         "--set", "models=[\"gam-pooled\"]", "--set", 'gam={"max_iter": 1, "lams": [1, 1]}']
    )
    assert code == EXIT_NUMERIC
    assert "ConvergenceError" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_scenario_command(workdir):
    out = workdir / "sc"
    args = ["scenario", "--config", str(workdir / "config.json"), "--output-dir", str(out), "--kind", "III",
            "--set", 'gam={"lams": [10, 10]}', "--set", 'scenario={"end": 2024}']
    assert main(args) == EXIT_OK
    df = pd.read_csv(out / "figures" / "scenario_III.csv")
    assert sorted(df["year"].unique()) == [2022, 2023, 2024]
    assert ((df["rate"] > 0) & (df["rate"] <= 1)).all()
    blob = json.loads((out / "fits" / "gam-scenario-III.json").read_text())
    assert blob["scenario"]["covid_path"]["FIN"] == pytest.approx([0.5, 0.25, 0.125], abs=1e-15)


def test_console_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "mortcast.cli", "report", str(workdir / "missing"), "--strict"],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_INVALID
    proc = subprocess.run([sys.executable, "-m", "mortcast.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "scenario" in proc.stdout
    assert Path(workdir / "tensor.csv").exists()
