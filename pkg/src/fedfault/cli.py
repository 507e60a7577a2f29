"""Command-line entry point: ``fedfault run|grid|preset|validate|plot``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, describe_schema, parse_config, parse_grid
from .harness import RunError, run, run_grid
from .plotting import emit_plot, read_history
from .presets import PRESETS, preset, preset_text

EXIT_OK, EXIT_RUN, EXIT_CONFIG = 0, 1, 2


def _add_output(p: argparse.ArgumentParser, default: str, shown: str | None = None) -> None:
    p.add_argument("--out", default=default, help=f"output directory (default: {shown or default})")
    p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedfault", description="Deterministic FedAvg simulator with fault injection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one config (all replicate seeds)")
    p.add_argument("config")
    _add_output(p, "fedfault-out")

    p = sub.add_parser("grid", help="run every cell of a config with grid axes or variants")
    p.add_argument("config")
    _add_output(p, "fedfault-grid")

    p = sub.add_parser("preset", help="run or print a built-in experiment grid")
    p.add_argument("name", choices=sorted(PRESETS))
    _add_output(p, "", "preset-<name>")
    p.add_argument("--print", action="store_true", dest="print_only", help="print the grid config and exit")
    p.add_argument("--quick", action="store_true", help="fewer rounds, for a smoke run")
    p.add_argument("--seeds", type=int, default=5, help="replicate seeds per cell (default: 5)")

    p = sub.add_parser("validate", help="check a config and print the resolved settings")
    p.add_argument("config", nargs="?")
    p.add_argument("--schema", action="store_true", help="list every key with its default")

    p = sub.add_parser("plot", help="draw learning curves from history.csv files")
    p.add_argument("history", nargs="+")
    p.add_argument("--out", default="curves.svg")
    p.add_argument("--metric", choices=("accuracy", "auroc", "train_loss"), default="accuracy")
    return parser


def _jobs(n: int) -> int:
    if n < 1:
        raise ConfigError("--jobs must be >= 1")
    return n


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            config = parse_config(args.config)
            run(config, args.out, args.force, _jobs(args.jobs))
            print(f"wrote {args.out}")
        elif args.command == "grid":
            grid = parse_grid(args.config)
            run_grid(grid, args.out, args.force, _jobs(args.jobs))
            print(f"wrote {grid.num_cells()} cells to {args.out}")
        elif args.command == "preset":
            if args.print_only:
                sys.stdout.write(preset_text(args.name, args.seeds, args.quick))
                return EXIT_OK
            grid = preset(args.name, args.seeds, args.quick)
            out = args.out or f"preset-{args.name}"
            run_grid(grid, out, args.force, _jobs(args.jobs))
            print(f"wrote {grid.num_cells()} cells to {out}")
        elif args.command == "validate":
            if args.schema:
                print(describe_schema())
                return EXIT_OK
            if args.config is None:
                raise ConfigError("validate needs a config path (or --schema)")
            grid = parse_grid(args.config)
            sys.stdout.write(grid.base.to_text())
            print(f"# ok: {grid.num_cells()} cell(s), {grid.base.num_clients} clients")
        elif args.command == "plot":
            curves = read_history(args.history, args.metric)
            emit_plot(curves, Path(args.out), args.metric)
            print(f"wrote {args.out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
