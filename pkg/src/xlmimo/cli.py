"""Command-line driver for the benchmark experiments.

Exit codes: 0 success, 2 configuration error, 3 too many diverged trials.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import (EXPERIMENTS, ConfigError, ExperimentConfig, dump_trajectory,
                    experiment_points, parse_key_values, run_experiment, write_records)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xlmimo-bench",
                                 description="Seeded channel-estimation benchmarks.")
    ap.add_argument("--config", type=Path, help="flat key = value config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--experiment", choices=EXPERIMENTS)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--trials", type=int, dest="n_trials")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key (repeatable)")
    ap.add_argument("--no-timing", action="store_true",
                    help="write wall_ms = 0 so outputs are byte-identical across runs")
    ap.add_argument("--print-config", action="store_true")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def load_config(args) -> ExperimentConfig:
    values = {}
    if args.config is not None:
        try:
            values.update(parse_key_values(args.config.read_text()))
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
    for item in args.set:
        values.update(parse_key_values(item))
    for key in ("seed", "experiment", "out", "n_trials", "workers"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    if args.no_timing:
        values["record_timing"] = False
    return ExperimentConfig.from_mapping(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return EXIT_OK
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.experiment == "trajectory":
        for path in dump_trajectory(cfg, out).values():
            print(path)
        return EXIT_OK
    csv_path = out / f"{cfg.experiment}.csv"
    with open(csv_path, "w", newline="") as fh:
        n_div = write_records(run_experiment(cfg), fh)
    print(csv_path)
    n_runs = cfg.n_trials * len(experiment_points(cfg)) * len(cfg.algorithms)
    if n_div > cfg.max_divergence_frac * n_runs:
        print(f"{n_div} diverged runs exceed the budget", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
