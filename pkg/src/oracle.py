"""
The ``oracle`` harness: grid fixed point of a one-dimensional game and, optionally, the
free-energy trace of a finite-volume evolution towards it.
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src import gridref
from src.config import OracleConfig
from src.experiment import format_value, write_rows_atomically
from src.gridref import FixedPointResult, GridDensity, GridKernel, Trajectory

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["step", "time", "free_energy", "clip", "tv_to_fixed_point"]


@dataclass
class OracleResult:
    fixed_point: FixedPointResult
    density_path: str
    trajectory: Optional[Trajectory] = None
    trace_path: Optional[str] = None


def initial_density(config: OracleConfig) -> GridDensity:
    cells = config.grid_cells
    if config.evolve.initial == "uniform":
        return gridref.uniform(cells)
    if config.evolve.initial == "random":
        return gridref.random_density(cells, np.random.default_rng(config.evolve.seed))
    return gridref.bump(cells)


def _trace_rows(trajectory: Trajectory) -> list[dict]:
    rows = []
    for i, step in enumerate(trajectory.steps):
        row = {
            "step": step,
            "time": trajectory.times[i],
            "free_energy": trajectory.free_energies[i],
            "clip": trajectory.clips[i],
            "tv_to_fixed_point": trajectory.tv_to_reference[i],
        }
        if trajectory.ni:
            row["ni"] = trajectory.ni[i]
        rows.append(row)
    return rows


def evolve(config: OracleConfig, K: GridKernel, reference: GridDensity) -> Trajectory:
    """Quasistatic flow of the initial density, or the coupled flow from (p0, uniform) when ``coupled``."""
    spec = config.evolve
    p0 = initial_density(config)
    if spec.coupled:
        return gridref.coupled_pde_evolve(p0, gridref.uniform(config.grid_cells), K, config.beta, spec.steps,
                                          spec.dt, spec.record_every, reference)
    trajectory = gridref.pde_evolve(p0, K, config.beta, spec.steps, spec.dt, spec.record_every, reference)
    increases = np.diff(trajectory.free_energies)
    if increases.size and float(np.max(increases)) > 1e-12:
        logger.warning("Free energy increased by up to %.3e between recorded steps", float(np.max(increases)))
    return trajectory


def run_oracle(config: OracleConfig) -> OracleResult:
    """
    Solve for (p*, q*) and write ``<output>.csv``; with evolution enabled also write
    ``<output>_trace.csv``.

    Raises:
    - NoConvergence: the damped iteration ran out of budget (carries the residual).
    - CFLViolation: the configured evolution step exceeds the stability bound.
    """
    K = GridKernel.from_kernel(config.kernel.build(), config.grid_cells)
    logger.info("Oracle %s: beta=%g, %d cells", config.name, config.beta, config.grid_cells)
    result = gridref.fixed_point_iterate(K, config.beta, config.damping, config.tol, config.max_iter)
    logger.info("Fixed point after %d iterations (residual %.3e, damping %.3e, sup deviation from uniform %.3e)",
                result.iterations, result.residual, result.damping, float(np.max(np.abs(result.p.values - 1.0))))

    parent = os.path.dirname(config.output)
    if parent:
        os.makedirs(parent, exist_ok=True)
    density_path = config.output + ".csv"
    gridref.densities_to_csv(density_path, {"p_star": result.p, "q_star": result.q})
    oracle_result = OracleResult(result, density_path)

    if config.evolve.enabled:
        trajectory = evolve(config, K, result.p)
        columns = TRACE_COLUMNS + (["ni"] if config.evolve.coupled else [])
        trace_path = config.output + "_trace.csv"
        write_rows_atomically(trace_path, columns, _trace_rows(trajectory))
        logger.info("Evolved %d steps to t=%s; final TV to p* %s", trajectory.steps[-1],
                    format_value(trajectory.times[-1]), format_value(trajectory.tv_to_reference[-1]))
        oracle_result.trajectory = trajectory
        oracle_result.trace_path = trace_path
    return oracle_result
