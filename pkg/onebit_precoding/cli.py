"""
Command line front end.

    python -m onebit_precoding run <config.yaml> [--out DIR] [--seed N] [--workers N]

Writes <experiment>.csv and manifest.json into the output directory.
"""

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from tabulate import tabulate

from onebit_precoding import __version__
from onebit_precoding.config import load_config, parse_config
from onebit_precoding.errors import ConfigError, PrecodingError
from onebit_precoding.experiments import ExperimentResult, run_experiment

logger = logging.getLogger(__name__)

WORKERS_ENV = "ONEBIT_WORKERS"
MAX_FAILURE_RATE = 0.01

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PRECODER_FAILURES = 3


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        logger.warning("ignoring %s=%r, not an integer", WORKERS_ENV, value)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="onebit_precoding",
        description="Simulate 1-bit massive MU-MIMO downlink precoders",
    )
    parser.add_argument("--log-level", default="INFO", help="Logging level")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the experiment described by a config file")
    run.add_argument("config", help="Path to the YAML experiment config")
    run.add_argument("--out", default=None, help="Output directory (overrides output_path)")
    run.add_argument("--seed", type=int, default=None, help="Base seed (overrides base_seed)")
    run.add_argument(
        "--workers",
        type=int,
        default=default_workers(),
        help=f"Worker processes for Monte Carlo trials (default ${WORKERS_ENV} or 1)",
    )
    run.add_argument("--progress", action="store_true", help="Show progress bars")
    return parser


def configure_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def write_outputs(result: ExperimentResult, config, out_dir: Path, wall_time_s: float):
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_file = out_dir / f"{result.kind.value}.csv"
    result.frame.to_csv(csv_file, index=False, float_format="%.12g", lineterminator="\n")

    manifest = {
        "software": "onebit_precoding",
        "version": __version__,
        "experiment": result.kind.value,
        "base_seed": config.base_seed,
        "config": config.model_dump(mode="json"),
        "summary": result.summary,
        "failed_fraction": result.failed_fraction,
        "csv": csv_file.name,
        "timing": dict(result.timing, wall_time_s=wall_time_s),
    }
    manifest_file = out_dir / "manifest.json"
    with open(manifest_file, mode="w") as file:
        json.dump(manifest, file, indent=2, sort_keys=True)
        file.write("\n")
    logger.info("wrote %s and %s", csv_file, manifest_file)
    return csv_file, manifest_file


def run(args) -> int:
    try:
        config = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["base_seed"] = args.seed
        if args.out is not None:
            overrides["output_path"] = args.out
        if overrides:
            config = parse_config(dict(config.model_dump(mode="json"), **overrides))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    start = time.perf_counter()
    try:
        result = run_experiment(config, workers=max(1, args.workers), progress=args.progress)
    except PrecodingError as exc:
        logger.error("experiment failed: %s", exc)
        return EXIT_FAILURE
    wall_time = time.perf_counter() - start

    write_outputs(result, config, Path(config.output_path), wall_time)
    print(tabulate(result.frame.head(40), headers="keys", showindex=False, floatfmt=".4g"))

    if result.failed_fraction > MAX_FAILURE_RATE:
        logger.error(
            "precoder failure rate %.2f%% exceeds %.0f%%",
            100 * result.failed_fraction, 100 * MAX_FAILURE_RATE,
        )
        return EXIT_PRECODER_FAILURES
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    if args.command == "run":
        return run(args)
    return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
