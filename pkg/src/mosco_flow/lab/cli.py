"""``mosco-flow`` command line: ``run <config>``, ``selftest``, ``version``.

Exit codes: 0 ok, 2 config error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .. import __version__
from .config import ConfigError, load_config
from .experiments import build_id, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mosco-flow", description="Gradient flows on varying spaces.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the sweep described by an INI config")
    run.add_argument("config")
    run.add_argument("-q", "--quiet", action="store_true", help="suppress per-point progress")
    st = sub.add_parser("selftest", help="exact and combinatorial checks")
    st.add_argument("--mutate", choices=("volume",), help=argparse.SUPPRESS)
    sub.add_parser("version", help="print the build identifier")
    return ap


def _err(msg):
    print(f"mosco-flow: {msg}", file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "version":
        print(build_id())
        return EXIT_OK
    if args.command == "selftest":
        from .selftest import run_selftest

        return EXIT_OK if run_selftest(args.mutate) else 1

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        outcome = run_experiment(cfg, log)
    except OSError as exc:
        _err(f"I/O error: {exc}")
        return EXIT_IO
    if not outcome.ok:
        for param, msg in outcome.failures:
            _err(f"solver failure at {param}: {msg}")
        return EXIT_SOLVER
    print(f"wrote {len(outcome.rows)} rows to {cfg.output_dir / 'report.csv'}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
