"""Command-line entry point: run, audit, train-detector, plot."""

import argparse
import json
import logging
import signal
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import Config
from .errors import PlanningError
from .formats import load_report, load_trajectory_table, save_support_sets
from .plots import emit_plots
from .scenario import ScenarioConfig, detector_summary, replay_audit, run_scenario
from .utils import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERDICT_FAIL = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="run.py", description="Closed-chain two-arm planning scenarios")
    parser.add_argument("--debug", action="store_true", help="verbose logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario", type=Path)
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--max-steps", type=int, help="MPC step limit")
    run.add_argument("--output", type=Path, default=Path("output"), help="artifact directory")
    run.add_argument("--config", type=Path, help="settings file layered under the scenario settings")
    run.add_argument("--no-plots", action="store_true")

    audit = sub.add_parser("audit", help="replay a trajectory table against its scenario")
    audit.add_argument("trajectory", type=Path)
    audit.add_argument("world", type=Path, help="scenario file the trajectory was run in")

    train = sub.add_parser("train-detector", help="train collision proxies for a scenario world")
    train.add_argument("world", type=Path, help="scenario file")
    train.add_argument("--seed", type=int)
    train.add_argument("--output", type=Path, default=Path("output"))

    plot = sub.add_parser("plot", help="redraw plots from a run report")
    plot.add_argument("report", type=Path, help="report.json of a run")
    plot.add_argument("--output", type=Path, help="defaults to the report's directory")
    return parser


def _load_scenario(path: Path, seed: Optional[int]) -> ScenarioConfig:
    scenario = ScenarioConfig.load(path)
    return replace(scenario, seed=seed) if seed is not None else scenario


def cmd_run(args) -> int:
    scenario = _load_scenario(args.scenario, args.seed)
    output = args.output / scenario.name
    report, _ = run_scenario(
        scenario, output, config_path=args.config, max_steps=args.max_steps, plots=not args.no_plots
    )
    print(f"{scenario.name}: {report.verdict} ({len(report.records)} steps) -> {output}")
    return EXIT_OK if report.verdict == "success" else EXIT_VERDICT_FAIL


def cmd_audit(args) -> int:
    audit = replay_audit(args.trajectory, args.world)
    print(
        f"rows={audit.rows} collisions={audit.collisions} chain={audit.chain_violations} "
        f"limits={audit.limit_violations} min_distance={audit.min_distance:.4f} "
        f"max_chain_residual={audit.max_chain_residual:.2e}"
    )
    return EXIT_OK if audit.ok else EXIT_VERDICT_FAIL


def cmd_train_detector(args) -> int:
    scenario = _load_scenario(args.world, args.seed)
    config = Config(overrides=scenario.settings)
    rng = np.random.default_rng(scenario.seed)
    detectors, summary = detector_summary(scenario.system, scenario.world_at(0.0), config, rng)
    output = args.output / scenario.name
    for index, detector in detectors.items():
        save_support_sets(output / f"detector_r{index}.json", detector.supports, detector.model.name)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_plot(args) -> int:
    report = load_report(args.report)
    output = args.output or args.report.parent
    table = load_trajectory_table(args.report.parent / "trajectory.csv")
    defaults = Config.DEFAULT_SETTINGS
    threshold = report.get("vis_threshold", defaults["vis_threshold"])
    d_safe = report.get("d_safe", defaults["d_safe"])
    for path in emit_plots(table, output, threshold, d_safe):
        print(path)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "audit": cmd_audit,
    "train-detector": cmd_train_detector,
    "plot": cmd_plot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point. Returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(sys.argv[1:] if argv is None else list(argv))
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 for --help
        return EXIT_USAGE if e.code else EXIT_OK

    setup_logging(debug=args.debug, log_dir=getattr(args, "output", None))

    def signal_handler(sig, frame):
        logger.info(f"Received signal {sig}")
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, signal_handler)

    try:
        return COMMANDS[args.command](args)
    except PlanningError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return EXIT_VERDICT_FAIL


if __name__ == "__main__":
    sys.exit(main())
