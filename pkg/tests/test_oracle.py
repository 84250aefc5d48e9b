import csv

import numpy as np
import pytest

from src.config import parse_oracle
from src.errors import CFLViolation
from src.oracle import TRACE_COLUMNS, run_oracle


def _config(tmp_path, **overrides):
    raw = {"kind": "oracle", "name": "grid", "beta": 10, "grid_cells": 64, "output": str(tmp_path / "grid")}
    raw.update(overrides)
    return parse_oracle(raw)


def _rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


@pytest.mark.parametrize("beta", [1, 10, 100])
def test_sine_fixed_point_is_uniform(tmp_path, beta):
    result = run_oracle(_config(tmp_path, beta=beta))
    rows = _rows(result.density_path)
    assert list(rows[0]) == ["x", "p_star", "q_star"]
    assert len(rows) == 64
    np.testing.assert_allclose([float(r["p_star"]) for r in rows], 1.0, atol=1e-6)
    np.testing.assert_allclose([float(r["q_star"]) for r in rows], 1.0, atol=1e-6)
    assert result.trace_path is None


def test_zero_kernel_converges_in_one_iteration(tmp_path):
    result = run_oracle(_config(tmp_path, kernel={"type": "sine_torus", "scale": 0.0}))
    assert result.fixed_point.iterations == 1


def test_bump_evolution_trace(tmp_path):
    cfg = _config(tmp_path, evolve={"enabled": True, "initial": "bump", "steps": 3000, "record_every": 100})
    result = run_oracle(cfg)
    rows = _rows(result.trace_path)
    assert list(rows[0]) == TRACE_COLUMNS
    assert [int(r["step"]) for r in rows] == list(range(0, 3001, 100))
    free_energy = np.array([float(r["free_energy"]) for r in rows])
    assert np.all(np.diff(free_energy) < 1e-12)
    tv = [float(r["tv_to_fixed_point"]) for r in rows]
    assert tv[-1] < tv[0]
    times = [float(r["time"]) for r in rows]
    assert times[0] == 0.0 and np.all(np.diff(times) > 0)


def test_coupled_evolution_traces_ni(tmp_path):
    cfg = _config(tmp_path, evolve={"enabled": True, "initial": "random", "steps": 400, "record_every": 100,
                                    "coupled": True})
    rows = _rows(run_oracle(cfg).trace_path)
    assert list(rows[0]) == TRACE_COLUMNS + ["ni"]
    assert len(rows) == 5
    assert all(float(r["ni"]) >= -1e-15 for r in rows)


def test_unstable_step_is_reported(tmp_path):
    with pytest.raises(CFLViolation):
        run_oracle(_config(tmp_path, evolve={"enabled": True, "steps": 10, "dt": 1.0}))
