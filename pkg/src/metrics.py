"""
Quantitative evaluation of particle ensembles.

- Histogram KL divergence to a reference density on the circle.
- Nikaido-Isoda (NI) error. E(p, q') is linear in q', so the supremum over distributions
  q' is attained at a point mass: sup_q' E(p, q') = max_y V(y, p), and likewise
  inf_p' E(p', q) = min_x U(x, q). The estimator therefore only has to optimise two
  functions of a single point.
- The inverse temperature above which the regularised equilibrium is an eps-Nash
  equilibrium of the unregularised game.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import icontract
import numpy as np
from scipy.special import rel_entr

from src import gridref
from src.dynamics import Ensemble
from src.errors import BoundUndefined, ManifoldMismatch
from src.gridref import GridDensity, GridKernel
from src.kernel import Kernel
from src.manifold import ManifoldSpec, Point, ball_volume_fraction, project_array, sample_coords

logger = logging.getLogger(__name__)

DEFAULT_BINS = 10
_EVALUATION_CHUNK = 256


@icontract.invariant(lambda self: self.counts.size >= 1, "A histogram needs at least one bin.")
@icontract.invariant(lambda self: self.edges.size == self.counts.size + 1, "B bins have B + 1 edges.")
@dataclass(frozen=True, eq=False)
class Histogram:
    counts: np.ndarray
    edges: np.ndarray

    @property
    def bins(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total


def _require_circle(e: Ensemble):
    if not (e.manifold.is_torus and e.manifold.dimension == 1):
        raise ManifoldMismatch(ManifoldSpec.torus(1), e.manifold)


@icontract.require(lambda bins: bins >= 1, "At least one bin is required")
@icontract.ensure(lambda e, result: result.total == len(e), "Counts must sum to the ensemble size")
def histogram(e: Ensemble, bins: int = DEFAULT_BINS) -> Histogram:
    """Counts of a circle ensemble in ``bins`` equal-length bins of [0, 1)."""
    _require_circle(e)
    index = np.minimum((e.coords[:, 0] * bins).astype(int), bins - 1)
    return Histogram(np.bincount(index, minlength=bins), np.linspace(0.0, 1.0, bins + 1))


def _bin_masses(reference: Optional[GridDensity], edges: np.ndarray) -> np.ndarray:
    if reference is None:
        return np.full(edges.size - 1, 1.0 / (edges.size - 1))
    grid_edges = np.linspace(0.0, 1.0, reference.cells + 1)
    cumulative = np.concatenate([[0.0], np.cumsum(reference.values) * reference.width])
    # the grid density is piecewise constant, so its CDF is piecewise linear
    return np.diff(np.interp(edges, grid_edges, cumulative))


@icontract.require(lambda B: B >= 1, "At least one bin is required")
@icontract.ensure(lambda result: result >= 0.0, "KL divergence is non-negative")
def kl_to_reference(e: Ensemble, B: int = DEFAULT_BINS, reference: Optional[GridDensity] = None) -> float:
    """
    KL divergence of the binned empirical distribution of ``e`` from the binned reference.

    Parameters:
    - e (Ensemble): Particles on the circle.
    - B (int): Number of equal-length bins.
    - reference (GridDensity, optional): Reference density; uniform (exact bin mass 1/B)
      when omitted.

    Returns:
    - float: sum_b p_b log(p_b / r_b) with 0 log 0 = 0; +inf (logged) when a reference
      bin is empty but the empirical one is not.

    Raises:
    - ManifoldMismatch: e is not on the circle.
    """
    hist = histogram(e, B)
    terms = rel_entr(hist.probabilities, _bin_masses(reference, hist.edges))
    divergence = float(np.sum(terms))
    if math.isinf(divergence):
        logger.warning("Empirical mass in a bin where the reference has none; KL is infinite")
    return max(divergence, 0.0)


@icontract.require(lambda n, B, trials: n >= 1 and B >= 1 and trials >= 1)
def sampling_floor(n: int, B: int = DEFAULT_BINS, trials: int = 1000, rng: Optional[np.random.Generator] = None) -> float:
    """
    Median binned KL of ``n`` i.i.d. uniform draws over ``trials`` repetitions: the error a
    perfect sampler of the uniform law would still show. About (B - 1) / (2 n).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    draws = rng.random((trials, n))
    index = np.minimum((draws * B).astype(int), B - 1) + B * np.arange(trials)[:, np.newaxis]
    counts = np.bincount(index.ravel(), minlength=B * trials).reshape(trials, B)
    divergences = rel_entr(counts / n, 1.0 / B).sum(axis=1)
    return float(np.median(divergences))


@dataclass(frozen=True)
class NIEstimatorOptions:
    """
    Settings of the NI estimator.

    Circle ensembles use dense evaluation on ``grid_points`` points; other manifolds use
    multi-start projected gradient ascent/descent with step halving on non-improvement.
    """
    grid_points: int = 4096
    starts: int = 32
    steps: int = 500
    step_size: float = 0.05
    seed: int = 0
    agreement_tol: float = 1e-4


@dataclass(frozen=True)
class NIReport:
    """
    Result of an NI estimate.

    ``is_lower_bound`` is set when the value comes from local optimisation: the multi-start
    supremum can only undershoot and the infimum only overshoot, so the estimate is a
    lower bound of the true error.
    """
    ni_value: float
    sup_value: float
    inf_value: float
    argmax_y: Point
    argmin_x: Point
    method: str
    is_lower_bound: bool
    starts: int = 0
    iterations: int = 0
    max_agreement: int = 0
    min_agreement: int = 0


def _chunked(evaluate, points: np.ndarray) -> np.ndarray:
    return np.concatenate([evaluate(points[i:i + _EVALUATION_CHUNK]) for i in range(0, len(points), _EVALUATION_CHUNK)])


def payoff_against_x(k: Kernel, X: Ensemble, y: np.ndarray) -> np.ndarray:
    """V(y, p_X) = (1/n_x) sum_i K(X_i, y) for every row of ``y``."""
    return _chunked(lambda block: k.pairwise(X.coords, block).mean(axis=0), y)


def payoff_against_y(k: Kernel, Y: Ensemble, x: np.ndarray) -> np.ndarray:
    """U(x, q_Y) = (1/n_y) sum_j K(x, Y_j) for every row of ``x``."""
    return _chunked(lambda block: k.pairwise(block, Y.coords).mean(axis=1), x)


def _multistart(objective, gradient, m: ManifoldSpec, opt: NIEstimatorOptions, rng: np.random.Generator):
    """Maximise ``objective`` over the manifold from ``opt.starts`` uniform starts."""
    points = sample_coords(m, opt.starts, rng)
    values = objective(points)
    steps = np.full(opt.starts, opt.step_size)
    for _ in range(opt.steps):
        candidates = project_array(points + steps[:, np.newaxis] * gradient(points), m)
        candidate_values = objective(candidates)
        improved = candidate_values > values
        points[improved] = candidates[improved]
        values[improved] = candidate_values[improved]
        steps[~improved] *= 0.5
    best = int(np.argmax(values))
    agreement = int(np.sum(values >= values[best] - opt.agreement_tol))
    return points[best], float(values[best]), agreement


@icontract.require(lambda X, Y, k: X.manifold == k.manifold and Y.manifold == k.manifold, "Ensembles must live on the kernel's manifold")
def ni_error(X: Ensemble, Y: Ensemble, k: Kernel, opt: NIEstimatorOptions = NIEstimatorOptions()) -> NIReport:
    """
    Nikaido-Isoda error max_y V(y, p_X) - min_x U(x, q_Y) of the empirical measures.

    Parameters:
    - X, Y (Ensemble): Particle populations.
    - k (Kernel): Payoff kernel.
    - opt (NIEstimatorOptions): Estimator settings.

    Returns:
    - NIReport: Exact to grid resolution on the circle; a labelled lower bound elsewhere,
      with the number of starts that reached the best value within ``agreement_tol``.
    """
    m = k.manifold
    if m.is_torus and m.dimension == 1:
        grid = (np.arange(opt.grid_points) / opt.grid_points)[:, np.newaxis]
        v = payoff_against_x(k, X, grid)
        u = payoff_against_y(k, Y, grid)
        i_max, i_min = int(np.argmax(v)), int(np.argmin(u))
        return NIReport(
            ni_value=float(v[i_max] - u[i_min]),
            sup_value=float(v[i_max]),
            inf_value=float(u[i_min]),
            argmax_y=Point(grid[i_max], m),
            argmin_x=Point(grid[i_min], m),
            method="grid",
            is_lower_bound=False,
        )

    rng = np.random.default_rng(opt.seed)
    y_best, sup_value, max_agreement = _multistart(
        lambda y: payoff_against_x(k, X, y),
        lambda y: k.mean_grad_y(X.coords, y),
        m, opt, rng,
    )
    x_best, neg_inf_value, min_agreement = _multistart(
        lambda x: -payoff_against_y(k, Y, x),
        lambda x: -k.mean_grad_x(x, Y.coords),
        m, opt, rng,
    )
    if max_agreement < 3 or min_agreement < 3:
        logger.debug("NI multi-start agreement is low (max: %d, min: %d starts)", max_agreement, min_agreement)
    return NIReport(
        ni_value=sup_value + neg_inf_value,
        sup_value=sup_value,
        inf_value=-neg_inf_value,
        argmax_y=Point(y_best, m),
        argmin_x=Point(x_best, m),
        method="multistart",
        is_lower_bound=True,
        starts=opt.starts,
        iterations=opt.steps,
        max_agreement=max_agreement,
        min_agreement=min_agreement,
    )


def is_eps_nash(report: NIReport, eps: float) -> bool:
    """Whether the estimated NI error certifies an eps-Nash equilibrium."""
    return report.ni_value <= eps


@icontract.require(lambda c_k: c_k > 0)
@icontract.require(lambda v_delta: 0.0 < v_delta < 1.0, "V_delta must lie strictly between 0 and 1")
@icontract.require(lambda c_k, eps: 0.0 < eps < 4.0 * c_k, "eps must lie in (0, 4 C_K)")
def theorem_threshold(c_k: float, v_delta: float, eps: float) -> float:
    """(4 / eps) log( 2 (1 - V_delta) / V_delta * (4 C_K / eps - 1) )."""
    return 4.0 / eps * math.log(2.0 * (1.0 - v_delta) / v_delta * (4.0 * c_k / eps - 1.0))


def beta_threshold(k: Kernel, m: ManifoldSpec, eps: float) -> float:
    """
    Inverse temperature above which the regularised equilibrium is eps-Nash.

    delta = eps / (2 Lip(K)), V_delta = ball_volume_fraction(m, delta), and the bound is
    (4 / eps) log(2 (1 - V_delta) / V_delta (4 C_K / eps - 1)).

    Raises:
    - BoundUndefined: eps outside (0, 4 C_K), or V_delta not strictly inside (0, 1).
    """
    constants = k.constants()
    if not 0.0 < eps < 4.0 * constants.bound:
        raise BoundUndefined(f"eps={eps} must lie in (0, 4 C_K) = (0, {4.0 * constants.bound})")
    delta = eps / (2.0 * constants.lipschitz)
    v_delta = ball_volume_fraction(m, delta)
    if not 0.0 < v_delta < 1.0:
        raise BoundUndefined(f"V_delta={v_delta} for delta={delta}")
    return theorem_threshold(constants.bound, v_delta, eps)


@icontract.require(lambda beta: beta > 0)
def free_energy_from_ensemble(e: Ensemble, K: GridKernel, beta: float) -> float:
    """Reduced free energy of the histogram density of ``e`` on the oracle grid."""
    hist = histogram(e, K.cells)
    return gridref.free_energy(GridDensity(hist.probabilities * K.cells), K, beta)
