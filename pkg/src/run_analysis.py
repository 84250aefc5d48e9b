"""
CrossHair verification of the contracted numerical helpers.

Each target (function, class or whole module) is explored symbolically against its
icontract pre/postconditions and ``assert`` statements while coverage is collected over
``src/``. Results go to a timestamped log under ``logs/`` and an HTML coverage report
under ``coverage/``.
"""

import json
import logging
import os
from typing import Callable

from coverage import Coverage
from crosshair.condition_parser import AnalysisKind
from crosshair.core import analyze_class, analyze_function, analyze_module, run_checkables
from crosshair.options import AnalysisOptions
from crosshair.statespace import MessageType

from src import ROOT_PATH
from src.coverage_reporting import report_coverage
from src.load_module import load_module_from_path
from src.log_analysis import log_analysis_results

logger = logging.getLogger(__name__)

TARGETS_PATH = os.path.join(ROOT_PATH, "targets.json")
FAILURE_STATES = (MessageType.POST_FAIL, MessageType.POST_ERR, MessageType.EXEC_ERR)


def run_crosshair_analysis_class(target, path, verbose, console_dump, open_coverage):
    return run_crosshair_analysis(analyze_class, target, path, verbose, console_dump, open_coverage)


def run_crosshair_analysis_function(target, path, verbose, console_dump, open_coverage):
    return run_crosshair_analysis(analyze_function, target, path, verbose, console_dump, open_coverage)


def run_crosshair_analysis_module(target, path, verbose, console_dump, open_coverage):
    return run_crosshair_analysis(analyze_module, target, path, verbose, console_dump, open_coverage)


def run_crosshair_analysis(analysis_function: Callable, target, path, verbose, console_dump, open_coverage) -> int:
    """Analyse one target; returns the number of counterexamples and execution errors found."""
    options = AnalysisOptions(
        analysis_kind=[AnalysisKind.asserts, AnalysisKind.icontract],
        enabled=True,
        specs_complete=True,
        per_condition_timeout=20.0,
        report_all=True,
        report_verbose=verbose,
        timeout=60.0,
        per_path_timeout=10.0,
        max_iterations=2000,
        max_uninteresting_iterations=200,
    )

    cov = Coverage(
        source=[os.path.join(ROOT_PATH, "src")],
        branch=True,
    )

    cov.erase()
    with cov.collect():
        analysis_results = list(run_checkables(analysis_function(target, options)))

    log_analysis_results(target, analysis_results, options, console_dump)
    report_coverage(cov, target, open_coverage)
    failures = sum(1 for result in analysis_results if result.state in FAILURE_STATES)
    logger.info("%s: %d message(s), %d failure(s)", target.__name__, len(analysis_results), failures)
    return failures


def run_analysis_target(file_path, function_name, class_name, verbose, console_dump, open_coverage) -> int:
    module = load_module_from_path(file_path)

    if function_name:
        if not hasattr(module, function_name):
            raise AttributeError(f"The module does not contain a function named '{function_name}'.")
        return run_crosshair_analysis_function(getattr(module, function_name), file_path, verbose, console_dump, open_coverage)

    if class_name:
        if not hasattr(module, class_name):
            raise AttributeError(f"The module does not contain a class named '{class_name}'.")
        return run_crosshair_analysis_class(getattr(module, class_name), file_path, verbose, console_dump, open_coverage)

    return run_crosshair_analysis_module(module, file_path, verbose, console_dump, open_coverage)


def load_targets(batch_path=TARGETS_PATH) -> list:
    with open(batch_path, "r", encoding="utf-8") as f:
        targets = json.load(f)

    if not isinstance(targets, list):
        raise TypeError("Batch file must contain a list of target objects.")
    return targets


def run_batch_analysis(verbose, console_dump, open_coverage, batch_path=TARGETS_PATH) -> int:
    """Analyse every target of the batch file; returns the total failure count."""
    targets = load_targets(batch_path)
    failures = 0

    for i, target in enumerate(targets, start=1):
        try:
            file_path = target["file"]
            function_name = target.get("function")
            class_name = target.get("class")

            print(f"\n[{i}/{len(targets)}] Running analysis for: {file_path} "
                  f"(function: {function_name}, class: {class_name})")

            failures += run_analysis_target(file_path, function_name, class_name, verbose, console_dump, open_coverage)

        except KeyError as e:
            print(f"Target #{i} is missing a required key: {e}")
            failures += 1
        except (FileNotFoundError, ImportError, AttributeError) as e:
            print(f"Analysis failed for Target #{i}: {e}")
            failures += 1

    return failures
