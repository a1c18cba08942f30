"""Run the four COVID scenarios and print projected age-85 rates.

    python3 scripts/run_scenarios.py --hmd-dir data/hmd --stmf data/stmf.csv
"""

import argparse
import logging

import numpy as np
import pandas as pd

from mortcast.data_ingest import ingest
from mortcast.scenarios import KINDS, run_scenarios


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hmd-dir", required=True)
    ap.add_argument("--stmf", default=None, help="weekly deaths for years past the HMD files")
    ap.add_argument("--end", type=int, default=2025)
    ap.add_argument("--age", type=int, default=85)
    ap.add_argument("--rho", type=float, default=np.log(2.0), help="decay rate of scenario III")
    ap.add_argument("--csv", default=None, help="write all scenario rates to this file")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    tensor = ingest(args.hmd_dir, args.stmf, year_range=(1990, 2021))
    results = run_scenarios(tensor, KINDS, rho=args.rho, end=args.end)
    fit = results["II"].fit
    print("covid coefficients:", {k: round(v, 4) for k, v in fit.covid.items()})
    i = int(np.flatnonzero(fit.ages == args.age)[0])
    rows = []
    for kind, res in results.items():
        for label, r in res.rates.items():
            rows.extend((kind, label, int(y), float(v)) for y, v in zip(res.years, r[i]))
    df = pd.DataFrame(rows, columns=["scenario", "subpop", "year", "rate"])
    print(f"\nage {args.age} rates")
    print(df.pivot_table(index=["subpop", "year"], columns="scenario", values="rate").to_string(float_format="{:.5f}".format))
    if args.csv:
        pd.concat([res.to_frame() for res in results.values()]).to_csv(args.csv, index=False)


if __name__ == "__main__":
    main()
