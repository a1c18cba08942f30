"""Command-line entry point ``mortcast``.

Exit status: 0 on success, 1 on invalid input or configuration, 2 when a
numerical routine fails (non-convergence, singular systems).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

import numpy as np

from .data_ingest import AssemblyError, ParseError, StructureError, ingest
from .numcore.irls import ConvergenceError
from .report.config import ConfigError, RunConfig
from .report.experiment import StageError, run_experiment, run_scenario
from .report.render import render_outputs
from .scenarios import KINDS

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
NUMERIC_ERRORS = (ConvergenceError, np.linalg.LinAlgError, FloatingPointError, OverflowError)

log = logging.getLogger("mortcast")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key] = _parse_value(value)
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    cfg = RunConfig.from_json(args.config, overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _exit_code(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    return EXIT_NUMERIC if isinstance(cause, NUMERIC_ERRORS) else EXIT_INVALID


def cmd_ingest(args) -> int:
    year_range = tuple(args.years) if args.years else None
    tensor = ingest(args.hmd_dir, args.stmf, None if not args.subpops else _subpops(args.subpops), year_range)
    tensor.to_csv(args.out)
    n = sum(p.deaths.size for p in tensor.panels.values())
    print(f"wrote {args.out}: {len(tensor.panels)} subpopulations, {n} cells")
    return EXIT_OK


def _subpops(labels):
    from .data_ingest import Subpopulation

    return [Subpopulation.parse(s) for s in labels]


def cmd_fit(args) -> int:
    res = run_experiment(_load_config(args), stages=("fit",))
    print(f"fits written to {res.output_dir / 'fits'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    res = run_experiment(_load_config(args))
    print(res.eval.to_string(index=False))
    print(f"run directory: {res.output_dir}")
    return EXIT_OK


def cmd_scenario(args) -> int:
    cfg = _load_config(args)
    res = run_scenario(cfg, args.kind)
    print(f"scenario {args.kind}: {len(res.rates)} subpopulations, years {res.years[0]}-{res.years[-1]} -> {cfg.output_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    rep = render_outputs(args.run_dir, strict=args.strict)
    for name in rep.written:
        print(name)
    if rep.missing:
        print(f"missing figure inputs: {', '.join(rep.missing)}", file=sys.stderr)
        if args.strict:
            return EXIT_INVALID
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mortcast", description="Mortality model fitting, evaluation and scenarios.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a canonical tensor CSV from HMD (and STMF) files")
    p.add_argument("--hmd-dir", required=True)
    p.add_argument("--stmf", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--years", type=int, nargs=2, metavar=("START", "END"))
    p.add_argument("--subpops", nargs="*", help="labels such as FIN_male (default: all ten)")
    p.set_defaults(func=cmd_ingest)

    def with_config(p):
        p.add_argument("--config", required=True)
        p.add_argument("--output-dir", default=None, help="overrides output_dir")
        p.add_argument("--seed", type=int, default=None, help="overrides seed and MORTCAST_SEED")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (JSON value)")
        return p

    with_config(sub.add_parser("fit", help="fit models and write fits/*.json")).set_defaults(func=cmd_fit)
    with_config(sub.add_parser("evaluate", help="fit, forecast, evaluate and write a full run directory")).set_defaults(
        func=cmd_evaluate
    )
    p = with_config(sub.add_parser("scenario", help="run one COVID scenario"))
    p.add_argument("--kind", required=True, choices=KINDS)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("report", help="render figure CSVs of a run directory to SVG")
    p.add_argument("run_dir")
    p.add_argument("--strict", action="store_true", help="exit 1 when figure inputs are missing")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"mortcast: stage {exc.stage} failed: {type(exc.cause).__name__}: {exc.cause}", file=sys.stderr)
        return _exit_code(exc)
    except NUMERIC_ERRORS as exc:
        print(f"mortcast: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParseError, StructureError, AssemblyError, ValueError, KeyError, OSError) as exc:
        print(f"mortcast: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
