"""
Grid oracle on the unit circle.

Densities are piecewise constant on N uniform cells with midpoint quadrature; the kernel
is sampled at cell centres. On this grid the module computes the potentials U and V, the
Gibbs best response q[p], the reduced free energy
F(p) = beta^-1 log Z_q(p) + beta^-1 S(p), its first variation Psi(., p) = U(., q[p]), the
Boltzmann fixed point p* = exp(-beta Psi(., p*)) / Z, and explicit finite-volume steps of
the quasistatic and of the coupled descent-ascent Fokker-Planck equations.

The discrete log-partition satisfies d/dp_i [beta^-1 log Z_q(p)] = Psi_i * width exactly,
so the variational identity and the free-energy decay along the quasistatic flow hold on the
grid and not only in the continuum limit.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import icontract
import numpy as np
from scipy.special import logsumexp, xlogy

from src.errors import CFLViolation, NoConvergence
from src.kernel import Kernel

logger = logging.getLogger(__name__)

DEFAULT_CELLS = 256
NORMALIZATION_TOLERANCE = 1e-12
CFL_SAFETY = 0.9
MIN_DAMPING = 1e-8


@icontract.invariant(lambda self: self.values.ndim == 1 and self.values.size >= 1, "A density needs at least one cell.")
@icontract.invariant(lambda self: bool(np.all(self.values >= 0.0)), "Density values must be non-negative.")
@icontract.invariant(
    lambda self: abs(float(np.sum(self.values)) / self.values.size - 1.0) <= NORMALIZATION_TOLERANCE,
    "A density must integrate to 1."
)
@dataclass(frozen=True, eq=False)
class GridDensity:
    """
    Probability density on N uniform cells of [0, 1), values at cell centres.

    inv: all values >= 0
    inv: sum(values) * width == 1 within 1e-12
    """
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def cells(self) -> int:
        return self.values.size

    @property
    def width(self) -> float:
        return 1.0 / self.values.size

    @property
    def centers(self) -> np.ndarray:
        return cell_centers(self.values.size)

    @classmethod
    @icontract.require(lambda values: np.all(np.asarray(values) >= 0) and np.sum(values) > 0, "values must be non-negative with positive mass")
    def normalized(cls, values) -> "GridDensity":
        values = np.asarray(values, dtype=float)
        return cls(values * (values.size / np.sum(values)))

    def mix(self, other: "GridDensity", weight: float) -> "GridDensity":
        """weight * self + (1 - weight) * other."""
        return GridDensity.normalized(weight * self.values + (1.0 - weight) * other.values)


def cell_centers(cells: int) -> np.ndarray:
    return (np.arange(cells) + 0.5) / cells


def uniform(cells: int = DEFAULT_CELLS) -> GridDensity:
    return GridDensity(np.ones(cells))


def bump(cells: int = DEFAULT_CELLS, center: float = 0.125, concentration: float = 20.0) -> GridDensity:
    """Periodic von Mises bump ``exp(concentration * cos(2 pi (x - center)))``."""
    x = cell_centers(cells)
    return GridDensity.normalized(np.exp(concentration * (np.cos(2.0 * math.pi * (x - center)) - 1.0)))


def random_density(cells: int, rng: np.random.Generator, modes: int = 6, amplitude: float = 1.0) -> GridDensity:
    """Strictly positive smooth density: exponential of a random trigonometric polynomial."""
    x = cell_centers(cells)
    log_values = np.zeros(cells)
    for mode in range(1, modes + 1):
        a, b = rng.standard_normal(2) * amplitude / mode
        log_values += a * np.cos(2.0 * math.pi * mode * x) + b * np.sin(2.0 * math.pi * mode * x)
    return GridDensity.normalized(np.exp(log_values - log_values.max()))


@icontract.invariant(lambda self: self.matrix.ndim == 2 and self.matrix.shape[0] == self.matrix.shape[1], "The grid kernel is N x N.")
@icontract.invariant(lambda self: bool(np.all(np.isfinite(self.matrix))), "Grid kernel entries must be finite.")
@dataclass(frozen=True, eq=False)
class GridKernel:
    """K_ij = K(x_i, y_j) at cell centres."""
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def cells(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    @icontract.require(lambda kernel: kernel.manifold.is_torus and kernel.manifold.dimension == 1, "The grid oracle is one-dimensional")
    def from_kernel(cls, kernel: Kernel, cells: int = DEFAULT_CELLS) -> "GridKernel":
        centers = cell_centers(cells)[:, np.newaxis]
        return cls(kernel.pairwise(centers, centers))

    @classmethod
    def constant(cls, value: float, cells: int = DEFAULT_CELLS) -> "GridKernel":
        return cls(np.full((cells, cells), float(value)))


def _same_grid(*items) -> bool:
    sizes = {item.cells for item in items}
    return len(sizes) == 1


@icontract.require(lambda p, K: _same_grid(p, K), "Density and kernel must share the grid")
def potential_V(p: GridDensity, K: GridKernel) -> np.ndarray:
    """V(y_j, p) = sum_i K_ij p_i width."""
    return K.matrix.T @ p.values * p.width


@icontract.require(lambda q, K: _same_grid(q, K), "Density and kernel must share the grid")
def potential_U(q: GridDensity, K: GridKernel) -> np.ndarray:
    """U(x_i, q) = sum_j K_ij q_j width."""
    return K.matrix @ q.values * q.width


def _gibbs(potential: np.ndarray, beta: float, width: float) -> np.ndarray:
    exponent = beta * potential
    log_z = logsumexp(exponent) + math.log(width)
    return np.exp(exponent - log_z)


@icontract.require(lambda beta: beta > 0, "beta must be positive")
@icontract.require(lambda p, K: _same_grid(p, K), "Density and kernel must share the grid")
def gibbs_response(p: GridDensity, K: GridKernel, beta: float) -> GridDensity:
    """
    Best response q[p] proportional to exp(beta V(., p)).

    The exponent is shifted by its maximum (log-sum-exp), so no beta overflows.
    """
    return GridDensity.normalized(_gibbs(potential_V(p, K), beta, p.width))


@icontract.require(lambda beta: beta > 0, "beta must be positive")
@icontract.require(lambda p, K: _same_grid(p, K), "Density and kernel must share the grid")
def log_partition(p: GridDensity, K: GridKernel, beta: float) -> float:
    """beta^-1 log Z_q(p) with Z_q(p) = sum_j exp(beta V_j) width."""
    return float((logsumexp(beta * potential_V(p, K)) + math.log(p.width)) / beta)


def entropy(p: GridDensity) -> float:
    """S(p) = sum_i p_i log p_i width, with 0 log 0 = 0."""
    return float(np.sum(xlogy(p.values, p.values)) * p.width)


@icontract.require(lambda p, q, K: _same_grid(p, q, K), "Densities and kernel must share the grid")
def energy(p: GridDensity, q: GridDensity, K: GridKernel) -> float:
    """E(p, q) = sum_ij K_ij p_i q_j width^2."""
    return float(p.values @ K.matrix @ q.values * p.width * q.width)


@icontract.require(lambda beta: beta > 0, "beta must be positive")
def free_energy(p: GridDensity, K: GridKernel, beta: float) -> float:
    """F(p) = beta^-1 log Z_q(p) + beta^-1 S(p)."""
    return log_partition(p, K, beta) + entropy(p) / beta


@icontract.require(lambda beta: beta > 0, "beta must be positive")
def first_variation(p: GridDensity, K: GridKernel, beta: float) -> np.ndarray:
    """Psi(., p) = U(., q[p])."""
    return potential_U(gibbs_response(p, K, beta), K)


def boltzmann(potential: np.ndarray, beta: float) -> GridDensity:
    """Normalised exp(-beta * potential)."""
    return GridDensity.normalized(_gibbs(-np.asarray(potential), beta, 1.0 / len(potential)))


def total_variation(p: GridDensity, q: GridDensity) -> float:
    return float(0.5 * np.sum(np.abs(p.values - q.values)) * p.width)


def ni_grid(p: GridDensity, q: GridDensity, K: GridKernel) -> float:
    """Nikaido-Isoda error max_y V(y, p) - min_x U(x, q) of a pair of grid densities."""
    return float(np.max(potential_V(p, K)) - np.min(potential_U(q, K)))


@dataclass(frozen=True)
class FixedPointResult:
    p: GridDensity
    q: GridDensity
    iterations: int
    residual: float
    damping: float


@icontract.require(lambda beta: beta > 0, "beta must be positive")
@icontract.require(lambda damping: 0 < damping <= 1, "damping must lie in (0, 1]")
@icontract.require(lambda tol: tol > 0, "tol must be positive")
@icontract.require(lambda max_iter: max_iter >= 1, "max_iter must be at least 1")
@icontract.ensure(lambda tol, result: result.residual < tol)
def fixed_point_iterate(
    K: GridKernel,
    beta: float,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    initial: Optional[GridDensity] = None,
) -> FixedPointResult:
    """
    Damped iteration p <- (1 - damping) p + damping exp(-beta Psi(., p)) / Z.

    Parameters:
    - K (GridKernel): Kernel on the grid.
    - beta (float): Inverse temperature.
    - damping (float): Initial relaxation weight in (0, 1]; halved (down to 1e-8)
      whenever the residual grows, since the undamped map oscillates at large beta.
    - tol (float): Stop once sup |exp(-beta Psi(., p)) / Z - p| < tol.
    - max_iter (int): Iteration budget.
    - initial (GridDensity, optional): Starting density, uniform by default.

    Returns:
    - FixedPointResult: p*, q* = q[p*], the iteration count, final residual and damping.

    Raises:
    - NoConvergence: max_iter reached; carries the last residual.
    """
    p = uniform(K.cells) if initial is None else initial
    previous = math.inf
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        assert abs(float(np.sum(p.values)) * p.width - 1.0) < 1e-9, "Loop invariant: p must stay normalised."
        target = boltzmann(first_variation(p, K, beta), beta)
        residual = float(np.max(np.abs(target.values - p.values)))
        if residual < tol:
            logger.debug("Fixed point reached after %d iterations (residual %.3e)", iteration, residual)
            return FixedPointResult(p, gibbs_response(p, K, beta), iteration, residual, damping)
        if residual > previous and damping > MIN_DAMPING:
            damping = max(0.5 * damping, MIN_DAMPING)
            logger.debug("Residual grew to %.3e at iteration %d; damping reduced to %.3e", residual, iteration, damping)
        previous = residual
        p = GridDensity.normalized((1.0 - damping) * p.values + damping * target.values)
    raise NoConvergence(residual, max_iter)


def fixed_point_solve(
    K: GridKernel,
    beta: float,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> tuple[GridDensity, GridDensity]:
    """The regularised equilibrium (p*, q*); see :func:`fixed_point_iterate`."""
    result = fixed_point_iterate(K, beta, damping, tol, max_iter)
    return result.p, result.q


@icontract.require(lambda cells: cells >= 1)
@icontract.require(lambda beta: beta > 0, "beta must be positive")
@icontract.require(lambda max_grad: max_grad >= 0, "max_grad is a magnitude")
@icontract.ensure(lambda result: result > 0)
def cfl_bound(cells: int, beta: float, max_grad: float) -> float:
    """Explicit advection-diffusion limit 0.25 width^2 / (beta^-1 + width * max_grad)."""
    width = 1.0 / cells
    return 0.25 * width * width / (1.0 / beta + width * max_grad)


def _face_gradient(values: np.ndarray, width: float) -> np.ndarray:
    return (np.roll(values, -1) - values) / width


def _flux(values: np.ndarray, potential: np.ndarray, beta: float, width: float) -> np.ndarray:
    """F_{i+1/2} = -p_{i+1/2} (d Phi)_{i+1/2} - beta^-1 (d p)_{i+1/2}, arithmetic-mean face density."""
    face_density = 0.5 * (values + np.roll(values, -1))
    return -face_density * _face_gradient(potential, width) - _face_gradient(values, width) / beta


def _resolve_dt(dt: Optional[float], bound: float) -> float:
    if dt is None:
        return CFL_SAFETY * bound
    if dt > bound:
        raise CFLViolation(dt, bound)
    return dt


def _advance(values: np.ndarray, potential: np.ndarray, beta: float, dt: float, width: float) -> tuple[np.ndarray, float]:
    flux = _flux(values, potential, beta, width)
    updated = values - dt / width * (flux - np.roll(flux, 1))
    negative = updated < 0.0
    clipped = float(-np.sum(updated[negative]) * width)
    if clipped > 0.0:
        updated[negative] = 0.0
        if clipped > NORMALIZATION_TOLERANCE:
            logger.warning("Clipped %.3e of negative mass in a finite-volume step", clipped)
    return updated * (updated.size / np.sum(updated)), clipped


@dataclass(frozen=True)
class StepReport:
    dt: float
    clipped: float


@icontract.require(lambda beta: beta > 0, "beta must be positive")
@icontract.require(lambda dt: dt is None or dt > 0, "dt must be positive")
def pde_step_report(p: GridDensity, K: GridKernel, beta: float, dt: Optional[float] = None) -> tuple[GridDensity, StepReport]:
    """
    One explicit finite-volume step of dp/dt = div(p grad(Psi(., p) + beta^-1 log p)).

    Periodic boundary, centred face differences, arithmetic-mean face densities; the
    telescoping fluxes conserve mass. Negative values are clipped to 0 and the density is
    renormalised; the clipped mass is reported. ``dt=None`` takes 0.9 times the CFL bound.

    Raises:
    - CFLViolation: dt exceeds :func:`cfl_bound`.
    """
    psi = first_variation(p, K, beta)
    bound = cfl_bound(p.cells, beta, float(np.max(np.abs(_face_gradient(psi, p.width)))))
    step = _resolve_dt(dt, bound)
    values, clipped = _advance(p.values, psi, beta, step, p.width)
    return GridDensity(values), StepReport(step, clipped)


def pde_step(p: GridDensity, K: GridKernel, beta: float, dt: Optional[float] = None) -> GridDensity:
    return pde_step_report(p, K, beta, dt)[0]


@icontract.require(lambda beta: beta > 0, "beta must be positive")
@icontract.require(lambda dt: dt is None or dt > 0, "dt must be positive")
@icontract.require(lambda p, q, K: _same_grid(p, q, K), "Densities and kernel must share the grid")
def coupled_pde_step_report(
    p: GridDensity, q: GridDensity, K: GridKernel, beta: float, dt: Optional[float] = None
) -> tuple[GridDensity, GridDensity, StepReport]:
    """
    Simultaneous step of the descent-ascent pair
    dp/dt = div(p grad(U(., q) + beta^-1 log p)), dq/dt = div(q grad(-V(., p) + beta^-1 log q)).
    """
    potential_p = potential_U(q, K)
    potential_q = -potential_V(p, K)
    steepest = max(
        float(np.max(np.abs(_face_gradient(potential_p, p.width)))),
        float(np.max(np.abs(_face_gradient(potential_q, q.width)))),
    )
    step = _resolve_dt(dt, cfl_bound(p.cells, beta, steepest))
    p_values, clipped_p = _advance(p.values, potential_p, beta, step, p.width)
    q_values, clipped_q = _advance(q.values, potential_q, beta, step, q.width)
    return GridDensity(p_values), GridDensity(q_values), StepReport(step, clipped_p + clipped_q)


def coupled_pde_step(
    p: GridDensity, q: GridDensity, K: GridKernel, beta: float, dt: Optional[float] = None
) -> tuple[GridDensity, GridDensity]:
    p_next, q_next, _ = coupled_pde_step_report(p, q, K, beta, dt)
    return p_next, q_next


@dataclass
class Trajectory:
    """Recorded evolution of a grid flow: one entry per recorded step."""
    p: GridDensity
    q: Optional[GridDensity] = None
    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    free_energies: list = field(default_factory=list)
    clips: list = field(default_factory=list)
    tv_to_reference: list = field(default_factory=list)
    ni: list = field(default_factory=list)


@icontract.require(lambda steps: steps >= 0)
@icontract.require(lambda record_every: record_every >= 1)
def pde_evolve(
    p0: GridDensity,
    K: GridKernel,
    beta: float,
    steps: int,
    dt: Optional[float] = None,
    record_every: int = 1,
    reference: Optional[GridDensity] = None,
    stop_tv: Optional[float] = None,
) -> Trajectory:
    """
    Iterate :func:`pde_step`, recording time, free energy, clipped mass and (with a
    reference density) the total variation to it. With ``stop_tv`` the run ends early once
    the distance to the reference drops below it.
    """
    trajectory = Trajectory(p0)
    p = p0
    time = 0.0

    def record(step_index: int, clipped: float):
        trajectory.steps.append(step_index)
        trajectory.times.append(time)
        trajectory.free_energies.append(free_energy(p, K, beta))
        trajectory.clips.append(clipped)
        if reference is not None:
            trajectory.tv_to_reference.append(total_variation(p, reference))

    record(0, 0.0)
    for step_index in range(1, steps + 1):
        p, report = pde_step_report(p, K, beta, dt)
        time += report.dt
        reached = stop_tv is not None and reference is not None and total_variation(p, reference) < stop_tv
        if step_index % record_every == 0 or step_index == steps or reached:
            record(step_index, report.clipped)
        if reached:
            logger.debug("Reached TV %.3e to the reference after %d steps (t=%.4f)", stop_tv, step_index, time)
            break
    trajectory.p = p
    return trajectory


@icontract.require(lambda steps: steps >= 0)
@icontract.require(lambda record_every: record_every >= 1)
def coupled_pde_evolve(
    p0: GridDensity,
    q0: GridDensity,
    K: GridKernel,
    beta: float,
    steps: int,
    dt: Optional[float] = None,
    record_every: int = 1,
    reference: Optional[GridDensity] = None,
) -> Trajectory:
    """Iterate :func:`coupled_pde_step`; records the grid NI error and the TV of p to ``reference``."""
    trajectory = Trajectory(p0, q0)
    p, q = p0, q0
    time = 0.0

    def record(step_index: int, clipped: float):
        trajectory.steps.append(step_index)
        trajectory.times.append(time)
        trajectory.free_energies.append(free_energy(p, K, beta))
        trajectory.clips.append(clipped)
        trajectory.ni.append(ni_grid(p, q, K))
        if reference is not None:
            trajectory.tv_to_reference.append(total_variation(p, reference))

    record(0, 0.0)
    for step_index in range(1, steps + 1):
        p, q, report = coupled_pde_step_report(p, q, K, beta, dt)
        time += report.dt
        if step_index % record_every == 0 or step_index == steps:
            record(step_index, report.clipped)
    trajectory.p, trajectory.q = p, q
    return trajectory


def densities_to_csv(path: str, columns: dict[str, GridDensity]):
    """Write ``x`` (cell centre) followed by one column per density, 17 significant digits."""
    names = list(columns)
    cells = columns[names[0]].cells
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["x", *names])
        for i, x in enumerate(cell_centers(cells)):
            writer.writerow([f"{x:.17g}", *(f"{columns[name].values[i]:.17g}" for name in names)])
