"""Run the LC/ML and GAM/APC comparisons and print rate-RMSE tables.

    python3 scripts/run_benchmarks.py --hmd-dir data/hmd --out runs
    python3 scripts/run_benchmarks.py --hmd-dir data/synthetic/hmd --out runs/synthetic --quick

Each comparison writes a full run directory under ``--out``; the printed
tables are pivots of its ``eval.csv``.
"""

import argparse
import logging
import time
from pathlib import Path

import pandas as pd

from mortcast.data_ingest import ingest
from mortcast.report import RunConfig, run_experiment

COMPARISONS = {
    "lc_ml": dict(models=["lc", "tree", "rf", "gbm"], train=(1950, 2010), test=(2011, 2019)),
    "gam_apc": dict(models=["apc", "gam-pooled", "gam-continentwise"], train=(1990, 2015), test=(2016, 2019)),
}
QUICK = dict(forest={"n_trees": 50}, gbm={"n_iter": 100})


def pivot(ev: pd.DataFrame, sample: str) -> pd.DataFrame:
    part = ev[ev["sample"] == sample]
    tab = part.pivot(index="subpop", columns="model", values="rmse_rates")
    return tab[[m for m in part["model"].unique()]]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hmd-dir", required=True)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--only", choices=sorted(COMPARISONS), help="run a single comparison")
    ap.add_argument("--quick", action="store_true", help="fewer forest trees and boosting rounds")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    tensor = ingest(args.hmd_dir)
    out = Path(args.out)
    names = [args.only] if args.only else list(COMPARISONS)
    pd.set_option("display.float_format", "{:.5f}".format)
    for name in names:
        kw = dict(COMPARISONS[name])
        if args.quick:
            kw.update(QUICK)
        cfg = RunConfig(output_dir=str(out / name), hmd_dir=args.hmd_dir, seed=args.seed, **kw)
        t0 = time.perf_counter()
        res = run_experiment(cfg, tensor=tensor)
        print(f"\n== {name}: train {cfg.train[0]}-{cfg.train[1]}, test {cfg.test[0]}-{cfg.test[1]} "
              f"({time.perf_counter() - t0:.0f} s) -> {cfg.output_dir}")
        print("in-sample rate RMSE")
        print(pivot(res.eval, "in").to_string())
        print("out-of-sample rate RMSE")
        print(pivot(res.eval, "out").to_string())


if __name__ == "__main__":
    main()
