import csv

import numpy as np
import pytest

from src import experiment
from src.config import parse_experiment
from src.errors import NumericalBlowUp
from src.experiment import format_value, output_columns, run_experiment


def _config(tmp_path, **overrides):
    raw = {
        "name": "tiny",
        "kernel": {"type": "sine_torus"},
        "run": {"n_x": 30, "n_y": 30, "k0": 5, "k1": 2, "k2": 1, "T": 20, "beta": 10, "seed": 4,
                "init_x": {"type": "box", "low": [0.0], "high": [0.25]}},
        "record_every": 5,
        "metrics": {"ni": {"grid_points": 256}},
        "output": str(tmp_path / "tiny"),
    }
    raw.update(overrides)
    return parse_experiment(raw)


def _rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def _without_timing(path):
    return [{k: v for k, v in row.items() if k != "elapsed_seconds"} for row in _rows(path)]


def test_format_value():
    assert format_value(None) == ""
    assert format_value(3) == "3"
    assert format_value(np.int64(3)) == "3"
    assert format_value(0.1) == "0.10000000000000001"
    assert float(format_value(1 / 3)) == 1 / 3


def test_single_run_records_every_interval(tmp_path):
    cfg = _config(tmp_path)
    result = run_experiment(cfg)
    rows = _rows(result.output_path)
    assert list(rows[0]) == output_columns(cfg)
    assert output_columns(cfg) == ["sweep_param", "sweep_value", "repeat", "seed", "outer_iter",
                                   "kl10", "ni", "status", "elapsed_seconds"]
    assert [int(r["outer_iter"]) for r in rows] == [0, 5, 10, 15, 20]
    assert all(r["status"] == "ok" for r in rows)
    assert all(r["seed"] == "4" for r in rows)
    assert not result.failed


def test_final_iteration_is_always_recorded(tmp_path):
    rows = _rows(run_experiment(_config(tmp_path, record_every=8)).output_path)
    assert [int(r["outer_iter"]) for r in rows] == [0, 8, 16, 20]


def test_sweep_summary(tmp_path):
    cfg = _config(tmp_path, sweep={"parameter": "beta", "values": [1, 100], "repeats": 3})
    result = run_experiment(cfg)
    rows = _rows(result.output_path)
    assert len(rows) == 2 * 3 * 5
    assert {r["sweep_param"] for r in rows} == {"beta"}
    assert [r["seed"] for r in rows if r["outer_iter"] == "0"] == ["4", "5", "6", "4", "5", "6"]

    summary = _rows(result.summary_path)
    assert [(s["sweep_value"], s["metric"]) for s in summary] == [
        ("1", "kl10"), ("1", "ni"), ("100", "kl10"), ("100", "ni")]
    for entry in summary:
        finals = [float(r[entry["metric"]]) for r in rows
                  if r["sweep_value"] == entry["sweep_value"] and r["outer_iter"] == "20"]
        assert entry["repeats"] == "3"
        assert float(entry["mean"]) == pytest.approx(np.mean(finals), abs=1e-12)
        assert float(entry["stderr"]) == pytest.approx(np.std(finals, ddof=1) / np.sqrt(3), abs=1e-12)


def test_reruns_are_identical_apart_from_timing(tmp_path):
    cfg = _config(tmp_path, sweep={"parameter": "n", "values": [10, 20], "repeats": 2})
    first = _without_timing(run_experiment(cfg).output_path)
    second = _without_timing(run_experiment(cfg).output_path)
    assert first == second


def test_worker_count_does_not_change_the_output(tmp_path):
    cfg = _config(tmp_path, sweep={"parameter": "h", "values": [0.01, 0.02], "repeats": 2})
    serial = _without_timing(run_experiment(cfg, workers=1).output_path)
    parallel = _without_timing(run_experiment(cfg, workers=2).output_path)
    assert serial == parallel


def test_grid_comparison_column(tmp_path):
    cfg = _config(tmp_path, metrics={"oracle_compare": True, "grid_cells": 32, "ni": {"grid_points": 256}})
    rows = _rows(run_experiment(cfg).output_path)
    assert "free_energy_grid" in rows[0]
    assert all(np.isfinite(float(r["free_energy_grid"])) for r in rows)


def test_sphere_experiment_records_ni_only(tmp_path):
    cfg = _config(tmp_path, kernel={"type": "poly_sphere", "d": 3},
                  run={"n_x": 20, "n_y": 20, "k0": 2, "k1": 1, "k2": 1, "T": 4, "beta": 100},
                  record_every=2, metrics={"ni": {"starts": 4, "steps": 20}})
    rows = _rows(run_experiment(cfg).output_path)
    assert "kl10" not in rows[0]
    assert len(rows) == 3


def test_blow_up_keeps_partial_rows_and_adds_an_error_row(tmp_path, monkeypatch):
    def exploding(cfg, k, observer=None, counter=None):
        from src.dynamics import initialize
        X, Y = initialize(cfg, k.manifold)
        observer(0, X, Y)
        raise NumericalBlowUp(3, "inner")

    monkeypatch.setitem(experiment.ALGORITHMS, "qslgd", exploding)
    result = run_experiment(_config(tmp_path))
    rows = _rows(result.output_path)
    assert result.failed
    assert [r["status"] for r in rows] == ["ok", "error: numerical blow-up (phase inner, iteration 3)"]
    assert rows[1]["outer_iter"] == "3"
    assert rows[1]["kl10"] == ""
    assert _rows(result.summary_path) == []


@pytest.mark.slow
def test_particle_count_scaling(tmp_path):
    slopes = []
    for algorithm, extra in (("qslgd", {"k0": 1000, "k1": 5, "k2": 1, "T": 30000}), ("lgda", {"T": 150000})):
        run = {"h_x": 0.01, "h_y": 0.01, "beta": 100, "seed": 0,
               "init_x": {"type": "box", "low": [0.0], "high": [0.25]},
               "init_y": {"type": "box", "low": [0.0], "high": [0.25]}, **extra}
        cfg = _config(tmp_path, name=algorithm, algorithm=algorithm, run=run, record_every=run["T"],
                      sweep={"parameter": "n", "values": [100, 316, 1000, 3162], "repeats": 5},
                      output=str(tmp_path / algorithm), workers=4)
        summary = [s for s in _rows(run_experiment(cfg).summary_path) if s["metric"] == "kl10"]
        n = np.array([float(s["sweep_value"]) for s in summary])
        kl = np.array([float(s["mean"]) for s in summary])
        slopes.append(np.polyfit(np.log(n), np.log(kl), 1)[0])
    for slope in slopes:
        assert -1.3 <= slope <= -0.7
