import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from modules.circulator.config import DEFAULT_OUTPUT, EXPERIMENTS
from modules.circulator.errors import CirculatorError, ConfigError
from modules.circulator.exporter import canonical
from modules.circulator.pipeline import load_run_config, run_experiment


logger = logging.getLogger("circulator")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ACCEPTANCE = 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="circulator",
        description="Frequency-conversion/delay circulator simulator",
    )
    parser.add_argument("--config", help="JSON run config; missing keys take defaults")
    parser.add_argument("--experiment", choices=EXPERIMENTS, help="experiment to run (overrides the config)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--threads", type=int, help="worker threads, 0 = one per CPU")
    parser.add_argument("--seed", type=int, default=0, help="seed for numpy's global generator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def write_error(directory, kind, message, details=None):
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    payload = {"status": "error", "kind": kind, "message": message, "details": canonical(details or [])}
    (path / "error.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    np.random.seed(args.seed)

    overrides = {}
    if args.experiment:
        overrides.setdefault("experiment", {})["name"] = args.experiment
    if args.out:
        overrides.setdefault("output", {})["directory"] = args.out
    if args.threads is not None:
        overrides.setdefault("solver", {})["threads"] = args.threads

    out_dir = args.out or DEFAULT_OUTPUT["directory"]
    try:
        config = load_run_config(args.config, overrides)
    except ConfigError as exc:
        logger.error("invalid config: %s", exc)
        write_error(out_dir, "config", str(exc), exc.details)
        return EXIT_CONFIG

    out_dir = config["output"]["directory"]
    try:
        _, report, paths = run_experiment(config)
    except CirculatorError as exc:
        logger.exception("experiment %s failed", config["experiment"]["name"])
        write_error(out_dir, type(exc).__name__, str(exc))
        return EXIT_SOLVER

    logger.info("%s done, %d file(s) written", config["experiment"]["name"], len(paths))
    if report.get("passed") is False:
        logger.error("acceptance failed: %s", report.get("failed_criteria", []))
        return EXIT_ACCEPTANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
