"""Write synthetic HMD and STMF files for trying out the pipeline without real data.

    python3 scripts/make_synthetic_data.py --out data/synthetic
"""

import argparse
from pathlib import Path

from mortcast.synthetic import write_hmd_dir, write_stmf


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/synthetic")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--hmd-last-year", type=int, default=2019)
    args = ap.parse_args()
    out = Path(args.out)
    sims = write_hmd_dir(out / "hmd", hmd_last_year=args.hmd_last_year, seed=args.seed)
    write_stmf(out / "stmf.csv", sims, seed=args.seed)
    print(f"HMD files in {out / 'hmd'}, STMF file {out / 'stmf.csv'}")


if __name__ == "__main__":
    main()
