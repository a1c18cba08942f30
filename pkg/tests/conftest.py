import os
import warnings
from pathlib import Path

import numpy as np
import pytest

from mortcast.data_ingest import Country, Gender, Subpopulation, ingest
from mortcast.synthetic import write_hmd_dir, write_stmf

# real HMD files for the data-dependent acceptance checks (test-only)
HMD_ENV = "MORTCAST_HMD_DIR"
STMF_ENV = "MORTCAST_STMF"

FIN_M = Subpopulation(Country.FIN, Gender.male)
FIN_F = Subpopulation(Country.FIN, Gender.female)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = (mark.args[0], mark.args[1])
    results = item.config._criteria
    if rep.when == "call" or rep.failed:
        ok = rep.passed and results.get(key, True)
        results[key] = ok


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), ok in sorted(results.items()):
        terminalreporter.write_line(f"criterion {num:>2}  {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    """HMD files through 2019 plus STMF weeks for 2019-2021."""
    root = tmp_path_factory.mktemp("synthetic")
    sims = write_hmd_dir(root / "hmd", hmd_last_year=2019, seed=0)
    write_stmf(root / "stmf.csv", sims, seed=0)
    return root


@pytest.fixture(scope="session")
def synthetic_tensor(synthetic_dir):
    with warnings.catch_warnings():
        # the synthetic STMF file carries one row of a country outside the study
        warnings.simplefilter("ignore", UserWarning)
        return ingest(synthetic_dir / "hmd", synthetic_dir / "stmf.csv", year_range=(1900, 2021))


@pytest.fixture(scope="session")
def hmd_tensor():
    """Real HMD (and STMF) data; the calling test fails when it is not configured."""
    hmd = os.environ.get(HMD_ENV)
    if not hmd or not Path(hmd).is_dir():
        pytest.fail(f"real HMD files required: set {HMD_ENV} to a directory of *_1x1.txt files", pytrace=False)
    stmf = os.environ.get(STMF_ENV)
    if stmf:
        return ingest(hmd, stmf, year_range=(1900, 2021))
    return ingest(hmd)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)
