"""
The ``run`` harness: sweeps x repeats of a particle algorithm, recorded as CSV.

Every (sweep value, repeat) cell is independent. A cell writes its rows to
``<output>.cells/<index>.csv`` through a temporary file and ``os.replace``; once all cells
are done the files are merged in cell order into ``<output>.csv``, so the result does not
depend on the worker count or on completion order.
"""

import csv
import logging
import math
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.config import Cell, ExperimentConfig, resolve_workers
from src.dynamics import ALGORITHMS, Ensemble
from src.errors import QSLGDError
from src.gridref import GridKernel
from src.metrics import NIEstimatorOptions, free_energy_from_ensemble, kl_to_reference, ni_error

logger = logging.getLogger(__name__)

LEADING_COLUMNS = ["sweep_param", "sweep_value", "repeat", "seed", "outer_iter"]
TRAILING_COLUMNS = ["status", "elapsed_seconds"]
SUMMARY_COLUMNS = ["sweep_value", "metric", "mean", "stderr", "repeats"]

STATUS_OK = "ok"


def format_value(value) -> str:
    """CSV rendering: integers as-is, floats with 17 significant digits, None as empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def metric_columns(config: ExperimentConfig) -> list[str]:
    """kl<B> on the circle, ni always, free_energy_grid when the grid comparison is on."""
    columns = []
    if config.kernel.manifold.is_torus and config.kernel.manifold.dimension == 1:
        columns.append(f"kl{config.metrics.bins}")
    columns.append("ni")
    if config.metrics.oracle_compare:
        columns.append("free_energy_grid")
    return columns


def output_columns(config: ExperimentConfig) -> list[str]:
    return LEADING_COLUMNS + metric_columns(config) + TRAILING_COLUMNS


class Recorder:
    """
    Observer handed to the particle algorithms; evaluates metrics every ``record_every``
    outer iterations (and at the final one) and keeps the resulting rows.
    """

    def __init__(self, config: ExperimentConfig, cell: Cell):
        self.config = config
        self.cell = cell
        self.kernel = cell.kernel.build()
        self.columns = metric_columns(config)
        self.ni_options = NIEstimatorOptions(**config.metrics.ni)
        self.grid_kernel = GridKernel.from_kernel(self.kernel, config.metrics.grid_cells) if config.metrics.oracle_compare else None
        self.rows: list[dict] = []
        self.started = time.perf_counter()

    def _base_row(self, outer_iter: Optional[int]) -> dict:
        return {
            "sweep_param": self.config.sweep.parameter if self.config.sweep is not None else "",
            "sweep_value": self.cell.sweep_value,
            "repeat": self.cell.repeat,
            "seed": self.cell.run.seed,
            "outer_iter": outer_iter,
        }

    def measure(self, X: Ensemble, Y: Ensemble) -> dict:
        values = {}
        for column in self.columns:
            if column == "ni":
                values[column] = ni_error(X, Y, self.kernel, self.ni_options).ni_value
            elif column == "free_energy_grid":
                values[column] = free_energy_from_ensemble(X, self.grid_kernel, self.cell.run.beta)
            else:
                values[column] = kl_to_reference(X, self.config.metrics.bins)
        return values

    def __call__(self, t: int, X: Ensemble, Y: Ensemble):
        if t % self.config.record_every != 0 and t != self.cell.run.T:
            return
        row = self._base_row(t)
        row.update(self.measure(X, Y))
        row["status"] = STATUS_OK
        row["elapsed_seconds"] = time.perf_counter() - self.started
        self.rows.append(row)
        logger.debug("cell %d t=%d %s", self.cell.index, t,
                     " ".join(f"{c}={row[c]:.4g}" for c in self.columns))

    def error_row(self, error: QSLGDError) -> dict:
        row = self._base_row(getattr(error, "iteration", None))
        row.update({column: None for column in self.columns})
        row["status"] = f"error: {error}"
        row["elapsed_seconds"] = time.perf_counter() - self.started
        return row


@dataclass(frozen=True)
class CellOutcome:
    index: int
    path: str
    failed: bool
    message: str = ""


def cells_directory(config: ExperimentConfig) -> str:
    return config.output + ".cells"


def write_rows_atomically(path: str, columns: list[str], rows: list[dict]):
    tmp_path = path + ".tmp"
    with open(tmp_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row[column]) for column in columns])
    os.replace(tmp_path, path)


def run_cell(config: ExperimentConfig, cell: Cell) -> CellOutcome:
    """Run one cell to completion (or to a numerical failure) and write its CSV."""
    recorder = Recorder(config, cell)
    algorithm = ALGORITHMS[config.algorithm]
    failed, message = False, ""
    logger.info("cell %d: %s=%s repeat=%d seed=%d", cell.index,
                config.sweep.parameter if config.sweep else "-", cell.sweep_value, cell.repeat, cell.run.seed)
    try:
        algorithm(cell.run, recorder.kernel, observer=recorder)
    except QSLGDError as error:
        logger.error("cell %d failed: %s", cell.index, error)
        recorder.rows.append(recorder.error_row(error))
        failed, message = True, str(error)
    path = os.path.join(cells_directory(config), f"{cell.index}.csv")
    write_rows_atomically(path, output_columns(config), recorder.rows)
    return CellOutcome(cell.index, path, failed, message)


def merge_cells(config: ExperimentConfig, outcomes: list[CellOutcome]) -> str:
    """Concatenate per-cell files in cell order under a single header."""
    path = config.output + ".csv"
    tmp_path = path + ".tmp"
    with open(tmp_path, "w", newline="", encoding="utf-8") as merged:
        merged.write(",".join(output_columns(config)) + "\r\n")
        for outcome in sorted(outcomes, key=lambda o: o.index):
            with open(outcome.path, "r", newline="", encoding="utf-8") as handle:
                handle.readline()
                shutil.copyfileobj(handle, merged)
    os.replace(tmp_path, path)
    return path


def summarize(config: ExperimentConfig, rows: list[dict]) -> list[dict]:
    """
    Per sweep value and metric: mean and standard error over repeats of the final row.

    Only repeats whose last row is a successful record of the final outer iteration count.
    """
    columns = metric_columns(config)
    finals: dict = {}
    for row in rows:
        finals[(row["sweep_value"], row["repeat"])] = row
    by_value: dict = {}
    for (sweep_value, _), row in finals.items():
        if row["status"] == STATUS_OK:
            by_value.setdefault(sweep_value, []).append(row)
    summary = []
    for sweep_value, final_rows in by_value.items():
        for column in columns:
            values = np.array([float(row[column]) for row in final_rows])
            count = values.size
            stderr = float(np.std(values, ddof=1) / math.sqrt(count)) if count > 1 else 0.0
            summary.append({"sweep_value": sweep_value, "metric": column, "mean": float(np.mean(values)),
                            "stderr": stderr, "repeats": count})
    return summary


def read_rows(path: str) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


@dataclass
class ExperimentResult:
    output_path: str
    summary_path: str
    cells: int
    failures: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.failures)


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """
    Run every cell of ``config`` and write ``<output>.csv`` and ``<output>_summary.csv``.

    Parameters:
    - config (ExperimentConfig): Parsed experiment.
    - workers (int, optional): Process count; defaults to the config value, itself
      overridden by the QSLGD_WORKERS environment variable.

    Returns:
    - ExperimentResult: Paths written and the cells that ended in a numerical failure.
      Failed cells keep their recorded rows followed by one error row.
    """
    workers = resolve_workers(config.workers) if workers is None else workers
    cells = config.cells()
    os.makedirs(cells_directory(config), exist_ok=True)
    logger.info("Experiment %s: %d cells (%s), %d worker(s)", config.name, len(cells), config.algorithm, workers)

    if workers <= 1 or len(cells) == 1:
        outcomes = [run_cell(config, cell) for cell in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_cell, [config] * len(cells), cells))

    output_path = merge_cells(config, outcomes)
    summary = summarize(config, read_rows(output_path))
    summary_path = config.output + "_summary.csv"
    write_rows_atomically(summary_path, SUMMARY_COLUMNS, summary)
    failures = [outcome for outcome in outcomes if outcome.failed]
    logger.info("Wrote %s and %s (%d failed cell(s))", output_path, summary_path, len(failures))
    return ExperimentResult(output_path, summary_path, len(cells), failures)
