"""Command-line front end: plots run <csv> | plots sweep <index>."""

from __future__ import annotations

import argparse
import sys

from .figures import SchemaError, plot_run, plot_sweep


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plots", description="Render metrics CSVs to figures")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="plot one run's metrics CSV")
    run.add_argument("csv", help="metrics CSV path")
    run.add_argument("--out", required=True, help="output directory for PNG files")
    sweep = sub.add_parser("sweep", help="overlay the runs of a sweep index")
    sweep.add_argument("index", help="sweep index.json path")
    sweep.add_argument("--out", required=True, help="output directory for PNG files")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            outputs = plot_run(args.csv, args.out)
        else:
            outputs = plot_sweep(args.index, args.out)
    except (SchemaError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in outputs:
        print(path)
    return 0


def entrypoint() -> None:
    sys.exit(main())
