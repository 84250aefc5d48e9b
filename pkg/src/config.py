"""
Experiment and oracle configuration files.

Configs are JSON key-value trees. Every key has a default listed in the ``*_DEFAULTS``
tables below; keys that are not in a table are rejected, so a typo in a sweep never
silently falls back to a default. Errors name the dotted path of the offending field.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Any, Optional

from src.dynamics import Initializer, RunConfig
from src.errors import ConfigError
from src.kernel import Kernel, KernelKind, build_kernel
from src.manifold import ManifoldSpec

logger = logging.getLogger(__name__)

WORKERS_ENV = "QSLGD_WORKERS"

KINDS = ("experiment", "oracle")
ALGORITHMS = ("qslgd", "lgda")

KERNEL_DEFAULTS = {"type": "sine_torus", "d": 3, "matrix_seed": 0, "scale": 1.0}

RUN_DEFAULTS = {
    "n_x": 1000, "n_y": 1000,
    "k0": 1000, "k1": 5, "k2": 1,
    "T": 30000,
    "h_x": 0.01, "h_y": 0.01,
    "beta": 100.0,
    "seed": 0,
    "init_x": {"type": "uniform"},
    "init_y": {"type": "uniform"},
}

INIT_DEFAULTS = {"type": "uniform", "low": None, "high": None}

SWEEP_DEFAULTS = {"parameter": None, "values": None, "repeats": 1}

NI_DEFAULTS = {"grid_points": 4096, "starts": 32, "steps": 500, "step_size": 0.05, "seed": 0}

METRICS_DEFAULTS = {"bins": 10, "oracle_compare": False, "grid_cells": 256, "ni": {}}

EXPERIMENT_DEFAULTS = {
    "kind": "experiment",
    "name": None,
    "algorithm": "qslgd",
    "kernel": {},
    "manifold": None,
    "run": {},
    "inner_budget": None,
    "sweep": None,
    "record_every": 100,
    "metrics": {},
    "workers": 1,
    "output": None,
}

FIXED_POINT_DEFAULTS = {"damping": 0.5, "tol": 1e-10, "max_iter": 100_000}

EVOLVE_DEFAULTS = {
    "enabled": False,
    "initial": "bump",
    "seed": 0,
    "steps": 20000,
    "dt": None,
    "record_every": 100,
    "coupled": False,
}

ORACLE_DEFAULTS = {
    "kind": "oracle",
    "name": None,
    "kernel": {},
    "beta": 10.0,
    "grid_cells": 256,
    "fixed_point": {},
    "evolve": {},
    "output": None,
}

# composite sweep axes on top of the RunConfig fields
COMPOSITE_PARAMETERS = ("n", "h", "d")
INTEGER_RUN_FIELDS = ("n_x", "n_y", "k0", "k1", "k2", "T", "seed")
FLOAT_RUN_FIELDS = ("h_x", "h_y", "beta")
SWEEPABLE = INTEGER_RUN_FIELDS + FLOAT_RUN_FIELDS + COMPOSITE_PARAMETERS


def _merge(section: Any, defaults: dict, path: str) -> dict:
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(path or "<root>", "must be an object")
    unknown = sorted(set(section) - set(defaults))
    if unknown:
        prefix = f"{path}." if path else ""
        raise ConfigError(prefix + unknown[0], "unknown key")
    return {**defaults, **section}


def _field(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _integer(value: Any, path: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    return value


def _real(value: Any, path: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"must be a number, got {value!r}")
    value = float(value)
    if math.isnan(value):
        raise ConfigError(path, "must not be NaN")
    if positive and not value > 0:
        raise ConfigError(path, f"must be positive, got {value}")
    return value


def _choice(value: Any, choices, path: str) -> str:
    if value not in choices:
        raise ConfigError(path, f"must be one of {', '.join(choices)}, got {value!r}")
    return value


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind
    d: int
    matrix_seed: int
    scale: float

    def build(self) -> Kernel:
        return build_kernel(self.kind, self.d, self.matrix_seed, self.scale)

    @property
    def manifold(self) -> ManifoldSpec:
        if self.kind is KernelKind.SINE_TORUS:
            return ManifoldSpec.torus(1)
        return ManifoldSpec.sphere(self.d)

    def with_dimension(self, d: int) -> "KernelSpec":
        return replace(self, d=d)


def parse_kernel(section: Any, path: str = "kernel") -> KernelSpec:
    values = _merge(section, KERNEL_DEFAULTS, path)
    kind = KernelKind(_choice(values["type"], [k.value for k in KernelKind], _field(path, "type")))
    d = _integer(values["d"], _field(path, "d"), minimum=2)
    return KernelSpec(
        kind=kind,
        d=d if kind is KernelKind.POLYNOMIAL_SPHERE else 1,
        matrix_seed=_integer(values["matrix_seed"], _field(path, "matrix_seed"), minimum=0),
        scale=_real(values["scale"], _field(path, "scale")),
    )


def _parse_manifold(value: Any, kernel: KernelSpec, path: str = "manifold") -> ManifoldSpec:
    if value is None:
        return kernel.manifold
    if not isinstance(value, str):
        raise ConfigError(path, "must be a string like 'torus:1' or 'sphere:3'")
    try:
        manifold = ManifoldSpec.parse(value)
    except ValueError as error:
        raise ConfigError(path, str(error)) from None
    if manifold != kernel.manifold:
        raise ConfigError(path, f"{manifold} does not match the kernel's manifold {kernel.manifold}")
    return manifold


def parse_initializer(section: Any, manifold: ManifoldSpec, path: str) -> Initializer:
    values = _merge(section, INIT_DEFAULTS, path)
    kind = _choice(values["type"], ("uniform", "box"), _field(path, "type"))
    if kind == "uniform":
        return Initializer()
    if not manifold.is_torus:
        raise ConfigError(_field(path, "type"), "box initialisation is only defined on the torus")
    corners = []
    for key in ("low", "high"):
        corner = values[key]
        if not isinstance(corner, list) or len(corner) != manifold.dimension:
            raise ConfigError(_field(path, key), f"must be a list of {manifold.dimension} numbers")
        corners.append(tuple(_real(c, f"{_field(path, key)}[{i}]") for i, c in enumerate(corner)))
    low, high = corners
    if not all(0.0 <= lo < hi <= 1.0 for lo, hi in zip(low, high)):
        raise ConfigError(path, "box sides must satisfy 0 <= low < high <= 1")
    return Initializer("box", low, high)


def _check_run_fields(fields: dict, algorithm: str, path: str):
    """Range checks on raw RunConfig values, so bad input becomes a ConfigError, not a contract violation."""
    for name in ("n_x", "n_y", "T"):
        _integer(fields[name], _field(path, name), minimum=1)
    for name in ("k0", "k1", "seed"):
        _integer(fields[name], _field(path, name), minimum=0)
    _integer(fields["k2"], _field(path, "k2"), minimum=1 if algorithm == "qslgd" else 0)
    if fields["seed"] >= 2 ** 63:
        raise ConfigError(_field(path, "seed"), "must be below 2**63")
    for name in FLOAT_RUN_FIELDS:
        _real(fields[name], _field(path, name), positive=True)


def parse_run(section: Any, manifold: ManifoldSpec, algorithm: str, record_every: int, path: str = "run") -> RunConfig:
    values = _merge(section, RUN_DEFAULTS, path)
    fields = {name: values[name] for name in INTEGER_RUN_FIELDS + FLOAT_RUN_FIELDS}
    _check_run_fields(fields, algorithm, path)
    for name in FLOAT_RUN_FIELDS:
        fields[name] = float(fields[name])
    return RunConfig(
        **fields,
        init_x=parse_initializer(values["init_x"], manifold, _field(path, "init_x")),
        init_y=parse_initializer(values["init_y"], manifold, _field(path, "init_y")),
        record_every=record_every,
    )


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    repeats: int


@dataclass(frozen=True)
class MetricsSpec:
    bins: int
    oracle_compare: bool
    grid_cells: int
    ni: dict


@dataclass(frozen=True)
class Cell:
    """One (sweep value, repeat) unit of work."""
    index: int
    sweep_value: Any
    repeat: int
    run: RunConfig
    kernel: KernelSpec


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    algorithm: str
    kernel: KernelSpec
    manifold: ManifoldSpec
    run: RunConfig
    inner_budget: Optional[int]
    sweep: Optional[SweepSpec]
    record_every: int
    metrics: MetricsSpec
    workers: int
    output: str

    def resolve(self, sweep_value: Any = None) -> tuple[RunConfig, KernelSpec]:
        """RunConfig and kernel for one sweep value, with the iteration budget applied."""
        run, kernel = self.run, self.kernel
        if self.sweep is not None:
            run, kernel = apply_sweep_value(run, kernel, self.sweep.parameter, sweep_value)
        if self.inner_budget is not None:
            steps = self.inner_budget if self.algorithm == "lgda" else self.inner_budget // max(run.k1, 1)
            run = replace(run, T=max(steps, 1))
        return run, kernel

    def cells(self) -> list[Cell]:
        values = self.sweep.values if self.sweep is not None else (None,)
        repeats = self.sweep.repeats if self.sweep is not None else 1
        cells = []
        for sweep_value in values:
            run, kernel = self.resolve(sweep_value)
            for repeat in range(repeats):
                cells.append(Cell(len(cells), sweep_value, repeat, replace(run, seed=run.seed + repeat), kernel))
        return cells


def apply_sweep_value(run: RunConfig, kernel: KernelSpec, parameter: str, value: Any) -> tuple[RunConfig, KernelSpec]:
    if parameter == "n":
        return replace(run, n_x=value, n_y=value), kernel
    if parameter == "h":
        return replace(run, h_x=value, h_y=value), kernel
    if parameter == "d":
        return run, kernel.with_dimension(value)
    return replace(run, **{parameter: value}), kernel


def _swept_fields(run: RunConfig, parameter: str, value: Any) -> dict:
    fields = {name: getattr(run, name) for name in INTEGER_RUN_FIELDS + FLOAT_RUN_FIELDS}
    if parameter == "n":
        fields.update(n_x=value, n_y=value)
    elif parameter == "h":
        fields.update(h_x=value, h_y=value)
    elif parameter != "d":
        fields[parameter] = value
    return fields


def _parse_sweep(section: Any, run: RunConfig, kernel: KernelSpec, algorithm: str, path: str = "sweep") -> Optional[SweepSpec]:
    if section is None:
        return None
    values = _merge(section, SWEEP_DEFAULTS, path)
    parameter = _choice(values["parameter"], SWEEPABLE, _field(path, "parameter"))
    if parameter == "d" and kernel.kind is not KernelKind.POLYNOMIAL_SPHERE:
        raise ConfigError(_field(path, "parameter"), "the dimension sweep needs a poly_sphere kernel")
    sweep_values = values["values"]
    if not isinstance(sweep_values, list) or not sweep_values:
        raise ConfigError(_field(path, "values"), "must be a non-empty list")
    repeats = _integer(values["repeats"], _field(path, "repeats"), minimum=1)
    checked = []
    for i, value in enumerate(sweep_values):
        value_path = f"{path}.values[{i}]"
        if parameter in INTEGER_RUN_FIELDS or parameter in ("n", "d"):
            value = _integer(value, value_path, minimum=2 if parameter == "d" else 0)
        else:
            value = _real(value, value_path, positive=True)
        _check_run_fields(_swept_fields(run, parameter, value), algorithm, value_path)
        checked.append(value)
    return SweepSpec(parameter, tuple(checked), repeats)


def _parse_metrics(section: Any, path: str = "metrics") -> MetricsSpec:
    values = _merge(section, METRICS_DEFAULTS, path)
    ni = _merge(values["ni"], NI_DEFAULTS, _field(path, "ni"))
    for key in ("grid_points", "starts", "steps", "seed"):
        _integer(ni[key], f"{path}.ni.{key}", minimum=1 if key != "seed" else 0)
    _real(ni["step_size"], f"{path}.ni.step_size", positive=True)
    if not isinstance(values["oracle_compare"], bool):
        raise ConfigError(_field(path, "oracle_compare"), "must be true or false")
    return MetricsSpec(
        bins=_integer(values["bins"], _field(path, "bins"), minimum=1),
        oracle_compare=values["oracle_compare"],
        grid_cells=_integer(values["grid_cells"], _field(path, "grid_cells"), minimum=2),
        ni=ni,
    )


def _name_and_output(values: dict, config_path: str) -> tuple[str, str]:
    name = values["name"] or os.path.splitext(os.path.basename(config_path))[0]
    if not isinstance(name, str):
        raise ConfigError("name", "must be a string")
    output = values["output"] or os.path.join("results", name)
    if not isinstance(output, str):
        raise ConfigError("output", "must be a string path")
    return name, output


def resolve_workers(configured: int) -> int:
    override = os.environ.get(WORKERS_ENV)
    if override is None:
        return configured
    try:
        return _integer(int(override), WORKERS_ENV, minimum=1)
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"must be an integer, got {override!r}") from None


def parse_experiment(raw: dict, config_path: str = "experiment.json") -> ExperimentConfig:
    values = _merge(raw, EXPERIMENT_DEFAULTS, "")
    _choice(values["kind"], ("experiment",), "kind")
    algorithm = _choice(values["algorithm"], ALGORITHMS, "algorithm")
    kernel = parse_kernel(values["kernel"])
    manifold = _parse_manifold(values["manifold"], kernel)
    record_every = _integer(values["record_every"], "record_every", minimum=1)
    run = parse_run(values["run"], manifold, algorithm, record_every)
    inner_budget = values["inner_budget"]
    if inner_budget is not None:
        inner_budget = _integer(inner_budget, "inner_budget", minimum=1)
    sweep = _parse_sweep(values["sweep"], run, kernel, algorithm)
    metrics = _parse_metrics(values["metrics"])
    if metrics.oracle_compare and kernel.kind is not KernelKind.SINE_TORUS:
        raise ConfigError("metrics.oracle_compare", "grid comparison needs the sine_torus kernel")
    name, output = _name_and_output(values, config_path)
    return ExperimentConfig(
        name=name,
        algorithm=algorithm,
        kernel=kernel,
        manifold=manifold,
        run=run,
        inner_budget=inner_budget,
        sweep=sweep,
        record_every=record_every,
        metrics=metrics,
        workers=_integer(values["workers"], "workers", minimum=1),
        output=output,
    )


@dataclass(frozen=True)
class EvolveSpec:
    enabled: bool
    initial: str
    seed: int
    steps: int
    dt: Optional[float]
    record_every: int
    coupled: bool


@dataclass(frozen=True)
class OracleConfig:
    name: str
    kernel: KernelSpec
    beta: float
    grid_cells: int
    damping: float
    tol: float
    max_iter: int
    evolve: EvolveSpec
    output: str


def parse_oracle(raw: dict, config_path: str = "oracle.json") -> OracleConfig:
    values = _merge(raw, ORACLE_DEFAULTS, "")
    _choice(values["kind"], ("oracle",), "kind")
    kernel = parse_kernel(values["kernel"])
    if kernel.kind is not KernelKind.SINE_TORUS:
        raise ConfigError("kernel.type", "the grid oracle is one-dimensional; use sine_torus")
    fixed_point = _merge(values["fixed_point"], FIXED_POINT_DEFAULTS, "fixed_point")
    damping = _real(fixed_point["damping"], "fixed_point.damping", positive=True)
    if damping > 1.0:
        raise ConfigError("fixed_point.damping", "must lie in (0, 1]")
    evolve = _merge(values["evolve"], EVOLVE_DEFAULTS, "evolve")
    for key in ("enabled", "coupled"):
        if not isinstance(evolve[key], bool):
            raise ConfigError(f"evolve.{key}", "must be true or false")
    dt = evolve["dt"]
    name, output = _name_and_output(values, config_path)
    return OracleConfig(
        name=name,
        kernel=kernel,
        beta=_real(values["beta"], "beta", positive=True),
        grid_cells=_integer(values["grid_cells"], "grid_cells", minimum=2),
        damping=damping,
        tol=_real(fixed_point["tol"], "fixed_point.tol", positive=True),
        max_iter=_integer(fixed_point["max_iter"], "fixed_point.max_iter", minimum=1),
        evolve=EvolveSpec(
            enabled=evolve["enabled"],
            initial=_choice(evolve["initial"], ("bump", "uniform", "random"), "evolve.initial"),
            seed=_integer(evolve["seed"], "evolve.seed", minimum=0),
            steps=_integer(evolve["steps"], "evolve.steps", minimum=0),
            dt=None if dt is None else _real(dt, "evolve.dt", positive=True),
            record_every=_integer(evolve["record_every"], "evolve.record_every", minimum=1),
            coupled=evolve["coupled"],
        ),
        output=output,
    )


def load_config_file(config_path: str) -> dict:
    """Read a JSON config; the root must be an object."""
    with open(config_path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config file must contain a JSON object")
    return raw


def load(config_path: str):
    """Parse a config file of either kind (dispatching on its ``kind`` key)."""
    raw = load_config_file(config_path)
    kind = _choice(raw.get("kind", "experiment"), KINDS, "kind")
    if kind == "oracle":
        return parse_oracle(raw, config_path)
    return parse_experiment(raw, config_path)
