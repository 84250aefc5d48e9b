#!/usr/bin/env python

import argparse
import json
import logging
import sys

from src import config as config_module
from src.config import ExperimentConfig, OracleConfig
from src.errors import CFLViolation, ConfigError, NoConvergence, NumericalBlowUp
from src.experiment import run_experiment
from src.log_analysis import RunLog
from src.oracle import run_oracle
from src.run_analysis import run_analysis_target, run_batch_analysis

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

CONFIG_ERRORS = (ConfigError, FileNotFoundError, json.JSONDecodeError)
NUMERICAL_ERRORS = (NumericalBlowUp, NoConvergence, CFLViolation)


def parse_arguments(argv=None):
    """Parse command-line arguments and return parsed options."""
    parser = argparse.ArgumentParser(
        description="Quasistatic Langevin dynamics for mixed Nash equilibria: particle experiments, grid oracle and contract verification.")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--verbose",
        action="store_true",
        help="Enable verbose (DEBUG) output.")
    common.add_argument(
        "--console-dump",
        action="store_true",
        help="Print the run log to the console in addition to writing it to logs/.")

    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", parents=[common], help="Run a particle experiment sweep.")
    run_parser.add_argument("config", type=str, help="Path to the experiment JSON config.")
    run_parser.add_argument("--workers", type=int, default=None, help="Override the worker count.")

    oracle_parser = subparsers.add_parser("oracle", parents=[common], help="Solve the grid fixed point (and evolve towards it).")
    oracle_parser.add_argument("config", type=str, help="Path to the oracle JSON config.")

    validate_parser = subparsers.add_parser("validate", parents=[common], help="Parse and validate a config without running it.")
    validate_parser.add_argument("config", type=str, help="Path to the JSON config.")

    verify_parser = subparsers.add_parser("verify", parents=[common], help="Run CrossHair over contracted helpers.")
    verify_parser.add_argument(
        "file_path",
        nargs="?",
        type=str,
        help="Path to the Python file containing the function, class, or module to analyse.")
    verify_parser.add_argument(
        "--batch",
        action="store_true",
        help="Run batch analysis from 'targets.json'.")
    group = verify_parser.add_mutually_exclusive_group(required=False)
    group.add_argument(
        "-function", "-func",
        dest="function_name",
        type=str,
        help="Name of the function to analyse.")
    group.add_argument(
        "-class",
        dest="class_name",
        type=str,
        help="Name of the class to analyse.")
    verify_parser.add_argument(
        "--open-coverage",
        action="store_true",
        help="Open the generated coverage HTML report in the default browser.")

    args = parser.parse_args(argv)

    if args.command == "verify":
        if args.batch:
            if args.file_path or args.function_name or args.class_name:
                verify_parser.error("When using --batch, do not provide file_path or function/class.")
        elif not args.file_path:
            verify_parser.error("Must provide file_path unless using --batch.")
    if args.command == "run" and args.workers is not None and args.workers < 1:
        run_parser.error("--workers must be at least 1.")

    return args


def load_typed(path, expected):
    parsed = config_module.load(path)
    if not isinstance(parsed, expected):
        kind = "oracle" if expected is OracleConfig else "experiment"
        raise ConfigError("kind", f"this subcommand needs a config of kind '{kind}'")
    return parsed


def command_run(args):
    experiment = load_typed(args.config, ExperimentConfig)
    with RunLog(experiment.name, args.console_dump, logging.DEBUG if args.verbose else logging.INFO):
        result = run_experiment(experiment, args.workers)
    print(f"Results written to: {result.output_path} and {result.summary_path}")
    if result.failed:
        for failure in result.failures:
            print(f"Cell {failure.index} failed: {failure.message}")
        return EXIT_NUMERICAL
    return EXIT_OK


def command_oracle(args):
    oracle = load_typed(args.config, OracleConfig)
    with RunLog(oracle.name, args.console_dump, logging.DEBUG if args.verbose else logging.INFO):
        result = run_oracle(oracle)
    print(f"Fixed point written to: {result.density_path}")
    if result.trace_path:
        print(f"Evolution trace written to: {result.trace_path}")
    return EXIT_OK


def command_validate(args):
    parsed = config_module.load(args.config)
    if isinstance(parsed, ExperimentConfig):
        cells = parsed.cells()
        print(f"{args.config}: valid experiment '{parsed.name}' ({parsed.algorithm}, {parsed.kernel.manifold}, "
              f"{len(cells)} cell(s), output {parsed.output})")
    else:
        print(f"{args.config}: valid oracle '{parsed.name}' (beta={parsed.beta:g}, {parsed.grid_cells} cells, output {parsed.output})")
    return EXIT_OK


def command_verify(args):
    name = "verify_batch" if args.batch else (args.function_name or args.class_name or "module")
    with RunLog(name, args.console_dump, logging.DEBUG if args.verbose else logging.INFO):
        if args.batch:
            failures = run_batch_analysis(args.verbose, args.console_dump, args.open_coverage)
        else:
            failures = run_analysis_target(args.file_path, args.function_name, args.class_name,
                                           args.verbose, args.console_dump, args.open_coverage)
    return EXIT_OK if failures == 0 else EXIT_CONFIG


COMMANDS = {
    "run": command_run,
    "oracle": command_oracle,
    "validate": command_validate,
    "verify": command_verify,
}


def main(argv=None):
    args = parse_arguments(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    try:
        return COMMANDS[args.command](args)
    except CONFIG_ERRORS as e:
        print(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as e:
        print(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (ImportError, AttributeError, TypeError) as e:
        if args.command != "verify":
            raise
        print(f"Error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
