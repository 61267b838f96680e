"""``probenorm`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from .bench import ReportError, SpecError, parse_spec, report, run_experiment

SEED_ENV = "PROBENORM_SEED"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="probenorm",
        description="Run probe-normalization experiment grids and print their tables.",
    )
    p.add_argument("--spec", help="experiment spec file")
    p.add_argument("--out", help="output directory (overrides the spec's out key)")
    p.add_argument("--seed", type=int, help="master seed (overrides the spec and $%s)" % SEED_ENV)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument(
        "--report",
        nargs="?",
        const=True,
        default=None,
        metavar="DIR",
        help="print tables for DIR (or for --out after running --spec)",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_seed(flag, spec_seed, environ=None) -> int:
    """Flag beats spec file, spec file beats ``$PROBENORM_SEED``, else 0."""
    if flag is not None:
        return int(flag)
    if spec_seed is not None:
        return int(spec_seed)
    env = (environ if environ is not None else os.environ).get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise SpecError(f"{SEED_ENV}={env!r} is not an integer") from None
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.spec is None and args.report in (None, True):
        print("probenorm: need --spec or --report DIR", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("probenorm: --jobs must be >= 1", file=sys.stderr)
        return 2

    out = None
    if args.spec is not None:
        try:
            spec = parse_spec(args.spec)
            seed = resolve_seed(args.seed, spec.seed)
        except (SpecError, OSError) as exc:
            print(f"probenorm: {exc}", file=sys.stderr)
            return 2
        out = args.out or spec.out or "results"
        spec = replace(spec, seed=seed, out=out)
        code = run_experiment(spec, out, seed, args.jobs)
        if code:
            print("probenorm: every run failed, see results.csv", file=sys.stderr)
            return code

    if args.report is not None:
        target = out if args.report is True else args.report
        try:
            sys.stdout.write(report(target))
        except ReportError as exc:
            print(f"probenorm: {exc}", file=sys.stderr)
            return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
