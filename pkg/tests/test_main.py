"""Tests for command-line argument parsing and exit codes."""

from pathlib import Path

from src.main import EXIT_OK, EXIT_USAGE, build_parser, main


def test_run_arguments():
    args = build_parser().parse_args(["run", "scenario_i_clear.json", "--seed", "4", "--max-steps", "10"])
    assert args.command == "run"
    assert args.scenario == Path("scenario_i_clear.json")
    assert args.seed == 4
    assert args.max_steps == 10
    assert args.output == Path("output")
    assert args.no_plots is False


def test_debug_flag_before_command():
    args = build_parser().parse_args(["--debug", "audit", "out/trajectory.csv", "world.json"])
    assert args.debug is True
    assert args.command == "audit"
    assert args.world == Path("world.json")


def test_missing_command_is_a_usage_error():
    assert main([]) == EXIT_USAGE


def test_unknown_option_is_a_usage_error():
    assert main(["run", "x.json", "--bogus"]) == EXIT_USAGE


def test_help_exits_cleanly():
    assert main(["--help"]) == EXIT_OK


def test_missing_scenario_file_is_reported(tmp_path):
    assert main(["run", str(tmp_path / "missing.json"), "--output", str(tmp_path)]) == EXIT_USAGE
