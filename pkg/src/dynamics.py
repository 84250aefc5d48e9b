"""
Particle algorithms for the entropy-regularised min-max game.

- LGDA: simultaneous Langevin gradient descent (X) / ascent (Y) on two ensembles.
- QSLGD: the quasistatic inner-outer scheme. Y particles are driven towards the Gibbs
  best response of the current X ensemble by inner Langevin ascent steps, the last k2
  inner iterates are collected into a snapshot buffer, and X takes one Langevin descent
  step against the snapshot measure.

The X update uses the descent drift ``-(1/(k2*n_y)) sum_j grad_x K(X_i, Yhat_j)`` of the
quasistatic SDE dX = -grad_x U(X, q[p]) dt + sqrt(2/beta) dW. Published listings of the
scheme print ``+ grad_y`` on that line, which contradicts both the SDE and the LGDA X
update; it is treated as a misprint.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import icontract
import numpy as np

from src.errors import NumericalBlowUp
from src.kernel import Kernel
from src.manifold import ManifoldSpec, Point, langevin_update, sample_box_coords, sample_coords

logger = logging.getLogger(__name__)

ROLE_X = 0
ROLE_Y = 1
ROLE_INIT_X = 2
ROLE_INIT_Y = 3

Observer = Callable[[int, "Ensemble", "Ensemble"], None]


def noise_coefficient(beta: float) -> float:
    """sqrt(1/beta); an infinite beta switches the noise off."""
    if math.isinf(beta):
        return 0.0
    return math.sqrt(1.0 / beta)


class NoiseStream:
    """
    Counter-based Gaussian stream for one particle population.

    The Philox key is ``(seed, role)`` and the third counter word holds the index of the
    ensemble update, so the block of update u is the same whatever happened before it.
    Row i of a block is the increment of particle i; splitting a block over workers by
    particle index therefore reproduces the serial draws bit for bit.
    """

    def __init__(self, seed: int, role: int):
        if not 0 <= seed < 2 ** 64:
            raise ValueError(f"seed must lie in [0, 2**64), got {seed}")
        self._key = seed + (role << 64)
        self.updates = 0

    def generator(self, update: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self._key, counter=update << 128))

    def next_block(self, n: int, d: int) -> np.ndarray:
        block = self.generator(self.updates).standard_normal((n, d))
        self.updates += 1
        return block


class ParticleNoise:
    """The pair of noise streams driving the X and Y populations of one run."""

    def __init__(self, seed: int):
        self.seed = seed
        self.x = NoiseStream(seed, ROLE_X)
        self.y = NoiseStream(seed, ROLE_Y)


@dataclass
class UpdateCounter:
    """Instrumentation: number of ensemble updates performed per phase."""
    inner: int = 0
    outer: int = 0
    lgda: int = 0


@icontract.invariant(lambda self: self.coords.ndim == 2 and self.coords.shape[0] >= 1, "An ensemble holds n >= 1 particles.")
@icontract.invariant(lambda self: self.coords.shape[1] == self.manifold.dimension, "Particles must have d coordinates.")
@icontract.invariant(
    lambda self: self.manifold.contains(self.coords),
    "Every particle must lie on the manifold.",
    enabled=icontract.SLOW,
)
@dataclass(frozen=True, eq=False)
class Ensemble:
    """
    A population of particles; its empirical measure approximates p_t (X) or q_t (Y).

    inv: n >= 1 and every row lies on the manifold
    """
    coords: np.ndarray
    manifold: ManifoldSpec

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords.reshape(-1, self.manifold.dimension)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def points(self) -> list[Point]:
        return [Point(row, self.manifold) for row in self.coords]

    @classmethod
    def from_points(cls, points: list[Point]) -> "Ensemble":
        return cls(np.stack([p.coords for p in points]), points[0].manifold)


@icontract.invariant(lambda self: self.coords.shape[0] == self.k2 * self.n_y, "The buffer holds exactly k2 * n_y particles.")
@dataclass(frozen=True, eq=False)
class SnapshotBuffer:
    """The Y-snapshots of the last k2 inner iterations, ordered by (s, i)."""
    coords: np.ndarray
    manifold: ManifoldSpec
    k2: int
    n_y: int

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def points(self) -> list[Point]:
        return [Point(row, self.manifold) for row in self.coords]


@icontract.invariant(lambda self: self.kind in ("uniform", "box"), "Initializer kind must be 'uniform' or 'box'.")
@icontract.invariant(
    lambda self: self.kind == "uniform" or (self.low is not None and self.high is not None),
    "A box initializer needs low and high corners."
)
@dataclass(frozen=True)
class Initializer:
    """Initial distribution of a population: uniform on the manifold or on a torus sub-box."""
    kind: str = "uniform"
    low: Optional[tuple] = None
    high: Optional[tuple] = None

    def sample(self, m: ManifoldSpec, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "box":
            return sample_box_coords(m, n, self.low, self.high, rng)
        return sample_coords(m, n, rng)


@icontract.invariant(lambda self: self.n_x >= 1 and self.n_y >= 1, "Particle counts must be at least 1.")
@icontract.invariant(lambda self: self.T >= 1, "At least one outer iteration is required.")
@icontract.invariant(lambda self: self.k0 >= 0 and self.k1 >= 0 and self.k2 >= 0, "Inner iteration counts must be non-negative.")
@icontract.invariant(lambda self: self.h_x > 0 and self.h_y > 0, "Step sizes must be positive.")
@icontract.invariant(lambda self: self.beta > 0, "beta must be positive.")
@icontract.invariant(lambda self: self.record_every >= 1, "record_every must be at least 1.")
@dataclass(frozen=True)
class RunConfig:
    """
    Hyperparameters of one particle run.

    inv: n_x, n_y, T >= 1; k0, k1, k2 >= 0; h_x, h_y, beta > 0
    """
    n_x: int = 1000
    n_y: int = 1000
    k0: int = 1000
    k1: int = 5
    k2: int = 1
    T: int = 30000
    h_x: float = 0.01
    h_y: float = 0.01
    beta: float = 100.0
    seed: int = 0
    init_x: Initializer = field(default_factory=Initializer)
    init_y: Initializer = field(default_factory=Initializer)
    record_every: int = 100


def initialize(cfg: RunConfig, m: ManifoldSpec) -> tuple[Ensemble, Ensemble]:
    """Draw X_0 ~ init_x and Y_0 ~ init_y from streams reserved for initialisation."""
    x_rng = NoiseStream(cfg.seed, ROLE_INIT_X).generator(0)
    y_rng = NoiseStream(cfg.seed, ROLE_INIT_Y).generator(0)
    return Ensemble(cfg.init_x.sample(m, cfg.n_x, x_rng), m), Ensemble(cfg.init_y.sample(m, cfg.n_y, y_rng), m)


def _ascent_update(X: Ensemble, Y: Ensemble, k: Kernel, h_y: float, beta: float, rng: ParticleNoise) -> Ensemble:
    drift = k.mean_grad_y(X.coords, Y.coords)
    xi = rng.y.next_block(len(Y), Y.manifold.dimension)
    return Ensemble(langevin_update(Y.coords, drift, h_y, noise_coefficient(beta), xi, Y.manifold), Y.manifold)


def _check_manifolds(k: Kernel, *ensembles) -> bool:
    return all(e.manifold == k.manifold for e in ensembles)


@icontract.require(lambda X, Y, k: _check_manifolds(k, X, Y), "Ensembles must live on the kernel's manifold")
@icontract.require(lambda h: h > 0, "h must be positive")
@icontract.ensure(lambda X, Y, result: len(result[0]) == len(X) and len(result[1]) == len(Y))
def lgda_step(
    X: Ensemble,
    Y: Ensemble,
    k: Kernel,
    h: float,
    beta: float,
    rng: ParticleNoise,
    h_y: Optional[float] = None,
    iteration: Optional[int] = None,
) -> tuple[Ensemble, Ensemble]:
    """
    One simultaneous Langevin descent-ascent update.

    Parameters:
    - X, Y (Ensemble): Current populations.
    - k (Kernel): Payoff kernel.
    - h (float): Step size of X (and of Y unless h_y is given).
    - beta (float): Inverse temperature; noise sqrt(2 h / beta).
    - rng (ParticleNoise): Noise streams of the run.
    - h_y (float, optional): Separate step size for Y.
    - iteration (int, optional): Index reported if the update blows up.

    Returns:
    - tuple[Ensemble, Ensemble]: X_i moved along -(1/n_y) sum_j grad_x K(X_i, Y_j) and Y_i
      along +(1/n_x) sum_j grad_y K(X_j, Y_i), both drifts taken from the pre-update ensembles.

    Raises:
    - NumericalBlowUp: a drift became non-finite.
    """
    step_y = h if h_y is None else h_y
    coeff = noise_coefficient(beta)
    drift_x = -k.mean_grad_x(X.coords, Y.coords)
    drift_y = k.mean_grad_y(X.coords, Y.coords)
    xi_x = rng.x.next_block(len(X), X.manifold.dimension)
    xi_y = rng.y.next_block(len(Y), Y.manifold.dimension)
    try:
        new_x = langevin_update(X.coords, drift_x, h, coeff, xi_x, X.manifold)
        new_y = langevin_update(Y.coords, drift_y, step_y, coeff, xi_y, Y.manifold)
    except NumericalBlowUp as error:
        raise error.at(iteration, "lgda") from None
    return Ensemble(new_x, X.manifold), Ensemble(new_y, Y.manifold)


@icontract.require(lambda steps: steps >= 0, "steps must be non-negative")
@icontract.require(lambda X, Y, k: _check_manifolds(k, X, Y), "Ensembles must live on the kernel's manifold")
@icontract.ensure(lambda Y, result: len(result) == len(Y))
def inner_equilibrate(
    X: Ensemble,
    Y: Ensemble,
    steps: int,
    k: Kernel,
    h_y: float,
    beta: float,
    rng: ParticleNoise,
    counter: Optional[UpdateCounter] = None,
    iteration: Optional[int] = None,
) -> Ensemble:
    """
    Run ``steps`` Langevin ascent updates of Y against the frozen X ensemble.

    Drift (1/n_x) sum_j grad_y K(X_j, Y_i), noise sqrt(2 h_y / beta). X is never modified.

    Raises:
    - NumericalBlowUp: a drift became non-finite.
    """
    for _ in range(steps):
        try:
            Y = _ascent_update(X, Y, k, h_y, beta, rng)
        except NumericalBlowUp as error:
            raise error.at(iteration, "inner") from None
        if counter is not None:
            counter.inner += 1
    return Y


@icontract.require(lambda k2: k2 >= 1, "k2 must be at least 1")
@icontract.require(lambda X, Y, k: _check_manifolds(k, X, Y), "Ensembles must live on the kernel's manifold")
@icontract.ensure(lambda Y, k2, result: len(result[1]) == k2 * len(Y), "The buffer holds k2 * n_y particles")
def collect_snapshots(
    X: Ensemble,
    Y: Ensemble,
    k2: int,
    k: Kernel,
    h_y: float,
    beta: float,
    rng: ParticleNoise,
    counter: Optional[UpdateCounter] = None,
    iteration: Optional[int] = None,
) -> tuple[Ensemble, SnapshotBuffer]:
    """
    Perform k2 more inner ascent updates, appending the whole Y ensemble after each.

    Returns:
    - tuple[Ensemble, SnapshotBuffer]: The final Y and the k2 * n_y snapshot particles;
      entry (s - 1) * n_y + i of the buffer is particle i after snapshot step s.
    """
    blocks = []
    for _ in range(k2):
        try:
            Y = _ascent_update(X, Y, k, h_y, beta, rng)
        except NumericalBlowUp as error:
            raise error.at(iteration, "snapshot") from None
        if counter is not None:
            counter.inner += 1
        blocks.append(Y.coords)
    return Y, SnapshotBuffer(np.concatenate(blocks, axis=0), Y.manifold, k2, len(Y))


@icontract.require(lambda buf: len(buf) > 0, "The snapshot buffer must be non-empty")
@icontract.require(lambda X, buf: X.manifold == buf.manifold, "X and the buffer must share a manifold")
@icontract.ensure(lambda X, result: len(result) == len(X))
def outer_step(
    X: Ensemble,
    buf: SnapshotBuffer,
    k: Kernel,
    h_x: float,
    beta: float,
    rng: ParticleNoise,
    counter: Optional[UpdateCounter] = None,
    iteration: Optional[int] = None,
) -> Ensemble:
    """
    Langevin descent step of every X particle against the snapshot measure.

    Drift -(1/(k2 n_y)) sum_j grad_x K(X_i, Yhat_j), noise sqrt(2 h_x / beta): an
    Euler-Maruyama step of dX = -grad_x U(X, q[p]) dt + sqrt(2/beta) dW with q[p] replaced by
    the empirical snapshot measure.
    """
    drift = -k.mean_grad_x(X.coords, buf.coords)
    xi = rng.x.next_block(len(X), X.manifold.dimension)
    try:
        coords = langevin_update(X.coords, drift, h_x, noise_coefficient(beta), xi, X.manifold)
    except NumericalBlowUp as error:
        raise error.at(iteration, "outer") from None
    if counter is not None:
        counter.outer += 1
    return Ensemble(coords, X.manifold)


@icontract.require(lambda cfg: cfg.k2 >= 1, "QSLGD needs k2 >= 1")
def run_qslgd(
    cfg: RunConfig,
    k: Kernel,
    observer: Optional[Observer] = None,
    counter: Optional[UpdateCounter] = None,
) -> tuple[Ensemble, Ensemble]:
    """
    Quasistatic Langevin gradient descent.

    Draws X_0, Y_0 from the initializers, warms Y up for k0 inner steps, then for
    t = 1..T runs k1 inner steps, k2 snapshot steps and one outer X step; Y carries
    over to the next outer iteration. ``observer(t, X, Y)`` is called at t = 0 (after
    the warm-up) and after every outer iteration.

    Raises:
    - NumericalBlowUp: labelled with the outer iteration (0 for the warm-up) and phase.
    """
    rng = ParticleNoise(cfg.seed)
    X, Y = initialize(cfg, k.manifold)
    logger.debug("QSLGD start: n_x=%d n_y=%d k=(%d, %d, %d) T=%d beta=%g seed=%d",
                 cfg.n_x, cfg.n_y, cfg.k0, cfg.k1, cfg.k2, cfg.T, cfg.beta, cfg.seed)
    try:
        Y = inner_equilibrate(X, Y, cfg.k0, k, cfg.h_y, cfg.beta, rng, counter, iteration=0)
    except NumericalBlowUp as error:
        raise error.at(0, "warm-up") from None
    if observer is not None:
        observer(0, X, Y)
    for t in range(1, cfg.T + 1):
        Y = inner_equilibrate(X, Y, cfg.k1, k, cfg.h_y, cfg.beta, rng, counter, iteration=t)
        Y, buf = collect_snapshots(X, Y, cfg.k2, k, cfg.h_y, cfg.beta, rng, counter, iteration=t)
        X = outer_step(X, buf, k, cfg.h_x, cfg.beta, rng, counter, iteration=t)
        if observer is not None:
            observer(t, X, Y)
    return X, Y


def run_lgda(
    cfg: RunConfig,
    k: Kernel,
    observer: Optional[Observer] = None,
    counter: Optional[UpdateCounter] = None,
) -> tuple[Ensemble, Ensemble]:
    """
    Langevin gradient descent-ascent for T iterations (k0, k1, k2 are ignored).

    Same initialisation, observer cadence and determinism as :func:`run_qslgd`.
    """
    rng = ParticleNoise(cfg.seed)
    X, Y = initialize(cfg, k.manifold)
    logger.debug("LGDA start: n_x=%d n_y=%d T=%d beta=%g seed=%d", cfg.n_x, cfg.n_y, cfg.T, cfg.beta, cfg.seed)
    if observer is not None:
        observer(0, X, Y)
    for t in range(1, cfg.T + 1):
        X, Y = lgda_step(X, Y, k, cfg.h_x, cfg.beta, rng, h_y=cfg.h_y, iteration=t)
        if counter is not None:
            counter.lgda += 1
        if observer is not None:
            observer(t, X, Y)
    return X, Y


ALGORITHMS = {
    "qslgd": run_qslgd,
    "lgda": run_lgda,
}
