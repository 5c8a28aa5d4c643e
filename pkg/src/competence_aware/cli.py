"""Command line entry point: run experiments, check maps, summarise metrics."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .campus import MapError, load_map
from .harness import ConfigError, ExperimentConfig, emit, read_metrics, run_experiment

log = logging.getLogger("competence_aware")


def default_config_path() -> Path:
    return Path(__file__).with_name("data") / "default.yaml"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="competence-aware", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run trials and write metrics.csv, aggregates.csv, refinements.log")
    run.add_argument("--config", type=Path, default=None, help="YAML config (default: bundled acceptance config)")
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None)
    variant = run.add_mutually_exclusive_group()
    variant.add_argument("--modified", dest="refinement", action="store_true", default=None,
                         help="enable feature discovery (default from config)")
    variant.add_argument("--standard", dest="refinement", action="store_false",
                         help="disable feature discovery")
    run.add_argument("--mode", choices=("fixed", "random"), default=None)
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--episodes", type=int, default=None)
    run.add_argument("--map", type=Path, default=None, help="campus map file (default: bundled map)")

    vm = sub.add_parser("validate-map", help="parse a campus map and report problems")
    vm.add_argument("path", type=Path)

    ins = sub.add_parser("inspect", help="summarise a metrics.csv file")
    ins.add_argument("--metrics", type=Path, required=True)
    ins.add_argument("--window", type=int, default=20, help="final episodes to average over")
    return parser


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config or default_config_path())
    overrides = {
        "seed": args.seed,
        "refinement": args.refinement,
        "mode": args.mode,
        "trials": args.trials,
        "episodes": args.episodes,
        "map": None if args.map is None else str(args.map),
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return replace(config, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_run(args) -> int:
    config = _load_config(args)
    load_map(config.map_path)  # fail early on a bad map

    def progress(trial, rows):
        log.info("trial %d done: %d episodes", trial, len(rows))

    result = run_experiment(config, progress=progress)
    paths = emit(result, args.out)
    variant = "modified" if config.refinement else "standard"
    print(f"{variant} CAS, {config.mode} tasks, {config.trials} trial(s) x {config.episodes} episode(s)")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return 0


def cmd_validate_map(args) -> int:
    cmap = load_map(args.path)
    rows, cols = len(cmap.grid), len(cmap.grid[0]) if cmap.grid else 0
    print(f"{args.path}: {cols}x{rows} grid, {len(cmap.doors)} doors, "
          f"{len(cmap.crosswalks)} crosswalks, {len(cmap.rooms)} rooms")
    for w in cmap.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _summary(records: list[dict], window: int) -> list[tuple]:
    by_trial: dict = {}
    for r in records:
        by_trial.setdefault(int(r["trial"]), []).append(r)

    def mean(rows, key):
        vals = [float(r[key]) for r in rows if r.get(key, "") != ""]
        return float(np.mean(vals)) if vals else float("nan")

    out = []
    for trial, rows in sorted(by_trial.items()):
        rows.sort(key=lambda r: int(r["episode"]))
        tail = rows[-window:]
        out.append((
            str(trial),
            len(rows),
            mean(tail, "level_optimality_all"),
            mean(tail, "level_optimality_visited"),
            int(rows[-1]["cumulative_signals"]),
            mean(tail, "cost_pct_diff"),
            rows[-1].get("active_features", ""),
        ))
    return out


def cmd_inspect(args) -> int:
    try:
        records = read_metrics(args.metrics)
    except OSError as exc:
        raise ConfigError(f"{args.metrics}: {exc.strerror or exc}") from None
    if records and "level_optimality_all" not in records[0]:
        raise ConfigError(f"{args.metrics}: not a metrics.csv file")
    table = _summary(records, args.window)
    header = ("trial", "episodes", "lo_all", "lo_visited", "signals", "cost_pct", "active features")
    print(f"final {args.window} episode means")
    print("{:>5} {:>8} {:>7} {:>10} {:>8} {:>9}  {}".format(*header))
    for t in table:
        print("{:>5} {:>8} {:>7.3f} {:>10.3f} {:>8} {:>9.2f}  {}".format(*t))
    if len(table) > 1:
        cols = np.array([[t[2], t[3], t[4], t[5]] for t in table], dtype=float)
        m = np.nanmean(cols, axis=0)
        print("{:>5} {:>8} {:>7.3f} {:>10.3f} {:>8.1f} {:>9.2f}".format("mean", "", *m))
    return 0


COMMANDS = {"run": cmd_run, "validate-map": cmd_validate_map, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MapError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
