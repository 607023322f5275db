"""Command-line entry point.

    fedprior run <config.json> [--out DIR] [--workers N] [--format csv,json,table] [--timing]
    fedprior validate <config.json>
    fedprior oracle [--seed S] [--trials N]

Exit codes: 0 success, 1 configuration error, 2 failed runs or failed oracle
checks. Set FEDPRIOR_LOG=debug|info|warning to control verbosity.
"""

import argparse
import logging
import os
import sys

from . import kernels
from .config import ConfigError, parse_config
from .diagnostics import bayes_suite, gradcheck_suite, injectivity_suite
from .runner import run_sweep


def _setup_logging():
    level = os.environ.get("FEDPRIOR_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _cmd_run(args):
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    formats = tuple(args.format.split(","))
    bad = [f for f in formats if f not in ("csv", "json", "table")]
    if bad:
        print(f"error: cli: unknown format(s) {bad}", file=sys.stderr)
        return 1
    reports, code = run_sweep(config, args.out, formats=formats,
                              workers=args.workers, timing=args.timing)
    for rep in reports:
        mean = rep.mean_error
        shown = f"{100 * mean:.3f}%" if mean is not None else "all runs failed"
        print(f"{rep.entry_id}: mean error {shown} over "
              f"{len(rep.succeeded)}/{len(rep.seeds)} runs")
    print(f"outputs in {args.out} (backend: {kernels.backend_name()})")
    return code


def _cmd_validate(args):
    try:
        parse_config(args.config)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    print("ok")
    return 0


def _cmd_oracle(args):
    worst = bayes_suite(trials=args.trials, seed=args.seed)
    roundtrip, min_gap = injectivity_suite(trials=args.trials * 10, seed=args.seed)
    grad = gradcheck_suite(trials=max(50, args.trials // 2), seed=args.seed)

    checks = [
        ("transition-bayes-oracle", f"max discrepancy {worst:.3e}", worst < 1e-12),
        ("injectivity-roundtrip", f"max residual {roundtrip:.3e}", roundtrip < 1e-8),
        ("injectivity-distinctness", f"min image gap {min_gap:.3e}", min_gap > 1e-9),
        ("gradient-vs-finite-diff", f"max rel error {grad:.3e}", grad < 1e-4),
    ]
    failed = False
    for name, detail, ok in checks:
        failed |= not ok
        print(f"{name:<28} {detail:<28} {'PASS' if ok else 'FAIL'}")
    return 2 if failed else 0


def main(argv=None):
    _setup_logging()
    parser = argparse.ArgumentParser(prog="fedprior", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default="results")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--format", default="csv,json,table")
    p_run.add_argument("--timing", action="store_true",
                       help="record wall-clock columns (outputs stop being "
                            "byte-reproducible)")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_orc = sub.add_parser("oracle", help="run the verification suites")
    p_orc.add_argument("--seed", type=int, default=0)
    p_orc.add_argument("--trials", type=int, default=100)
    p_orc.set_defaults(func=_cmd_oracle)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
