import argparse
import logging
import os
import sys

from pathlib import Path
from typing import Sequence

import yaml

from .config import OUTPUT_DIR_ENV, load_config
from .document import ConfigError
from .harness import SWEEP_AXES, commcost_report, run_seeds, sweep
from .monitor import monitor_run
from .reports import write_run, write_table
from .verify import CHECKS, run_checks

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(',') if part]


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(',') if part]


def _output_dir(default: str) -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or default)


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    runs = run_seeds(config)

    status = EXIT_OK
    bounds = {}
    for result in runs.results:
        if result.smoothness is None:
            continue
        report = monitor_run(result)
        bounds[f"seed_{result.seed}"] = report.as_dict()
        try:
            report.check()
        except AssertionError as e:
            logger.error("seed %d: %s", result.seed, e)
            status = EXIT_FAILED

    path = write_run(runs, config.output, {'convergence_bound': bounds} if bounds else None)
    logger.info("wrote %s", path)
    print(f"median final test error {runs.median_test_error:.6g} over {len(runs.results)} seeds ({path})")
    return status


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    defenses = [yaml.safe_load(text) for text in args.defense] if args.defense else None
    rows = sweep(config, args.axis, args.values, defenses, workers=args.workers)

    path = config.output / f"sweep_{args.axis}.csv"
    write_table(rows, path)
    logger.info("wrote %s", path)
    for row in rows:
        print(f"{row.axis}={row.value:g}\t{row.defense}\t{row.attack}\t{row.median_test_error:.6g}")
    return EXIT_OK


def cmd_commcost(args: argparse.Namespace) -> int:
    rows = commcost_report(args.n, args.d, args.m)
    if args.out is not None:
        write_table(rows, args.out)
        logger.info("wrote %s", args.out)

    for row in rows:
        measured = '-' if row.measured is None else str(row.measured)
        flag = {True: 'ok', False: 'MISMATCH', None: row.note}[row.matches]
        print(f"{row.arch:8}\tn={row.n}\td={row.d}\tm={row.m}\tpredicted={row.predicted:g}\tmeasured={measured}\t{flag}")
    return EXIT_FAILED if any(row.matches is False for row in rows) else EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    out_dir = args.out or _output_dir('results') / 'verify'
    report = run_checks(args.seed, out_dir, args.check or None)
    for result in report.results:
        print(f"{result.name:20}\t{'pass' if result.passed else 'FAIL'}\t{result.cases} cases")
    logger.info("wrote %s", out_dir / 'verify.yaml')
    return EXIT_OK if report.passed else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='brace', description="Byzantine-robust ring-all-reduce simulator")
    parser.add_argument('-v', '--verbose', action='store_true', help="log per-round metrics")
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help="train with one config over all its seeds")
    run.add_argument('config', type=Path)
    run.set_defaults(handler=cmd_run)

    sweep_parser = commands.add_parser('sweep', help="median-of-seeds runs along one axis")
    sweep_parser.add_argument('config', type=Path)
    sweep_parser.add_argument('--axis', required=True, choices=SWEEP_AXES)
    sweep_parser.add_argument('--values', required=True, type=_float_list, help="comma-separated axis values")
    sweep_parser.add_argument('--defense', action='append', help="architecture selector (YAML), repeatable; default: the config's")
    sweep_parser.add_argument('--workers', type=int, default=1)
    sweep_parser.set_defaults(handler=cmd_sweep)

    commcost = commands.add_parser('commcost', help="predicted vs measured per-round bits")
    commcost.add_argument('--n', required=True, type=_int_list, help="comma-separated client counts")
    commcost.add_argument('--d', required=True, type=int)
    commcost.add_argument('--m', required=True, type=int)
    commcost.add_argument('--out', type=Path, help="also write the table as CSV")
    commcost.set_defaults(handler=cmd_commcost)

    verify = commands.add_parser('verify', help="protocol, oracle and convergence checks")
    verify.add_argument('--seed', type=int, default=0)
    verify.add_argument('--out', type=Path, help=f"report directory (default ${OUTPUT_DIR_ENV}/verify or results/verify)")
    verify.add_argument('--check', action='append', choices=list(CHECKS), help="run only these checks")
    verify.set_defaults(handler=cmd_verify)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("invalid config: %s", e)
        return EXIT_CONFIG
    except (AssertionError, RuntimeError) as e:
        logger.error("%s", e)
        return EXIT_FAILED


if __name__ == '__main__':
    sys.exit(main())
