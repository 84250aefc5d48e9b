"""
Strategy spaces of the two players: the flat torus (R/Z)^d and the unit sphere S^{d-1}.

Points are stored as float arrays of length ``dimension`` (the ambient dimension for the
sphere, so ``sphere:3`` is S^2). Ensembles of particles are stored as ``(n, dimension)``
arrays; the scalar helpers at the top of the module are the ones the contract
verification batch runs CrossHair on.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import icontract
import mpmath
import numpy as np
import regex

from src.errors import BoundUndefined, DegenerateProjection, NumericalBlowUp

logger = logging.getLogger(__name__)

SPHERE_TOLERANCE = 1e-12

_MANIFOLD_PATTERN = regex.compile(r"\s*(?P<kind>torus|sphere)\s*:\s*(?P<dimension>[0-9]+)\s*")


@icontract.require(lambda value: math.isfinite(value), "value must be finite")
@icontract.ensure(lambda result: 0.0 <= result < 1.0, "The wrapped value must lie in [0, 1)")
def wrap_unit(value: float) -> float:
    """
    Reduce a real number modulo 1 into [0, 1).

    Floating point ``-1e-20 % 1.0`` evaluates to ``1.0``; that case is folded back to 0.
    """
    wrapped = value % 1.0
    if wrapped >= 1.0:
        return 0.0
    return wrapped


@icontract.require(lambda a, b: 0.0 <= a < 1.0 and 0.0 <= b < 1.0, "Both coordinates must lie in [0, 1)")
@icontract.ensure(lambda result: 0.0 <= result <= 0.5, "Distance on the unit circle is at most 1/2")
@icontract.ensure(lambda a, b, result: result <= abs(a - b), "The wrapped gap never exceeds the direct gap")
def torus_arc_distance(a: float, b: float) -> float:
    gap = abs(a - b)
    return min(gap, 1.0 - gap)


@icontract.require(lambda delta: delta > 0, "delta must be positive")
@icontract.require(lambda dimension: dimension >= 1, "dimension must be at least 1")
@icontract.ensure(lambda result: 0.0 < result <= 1.0, "A volume fraction lies in (0, 1]")
def torus_ball_fraction(delta: float, dimension: int) -> float:
    """
    Fraction of the unit torus (R/Z)^dimension covered by a ball of radius delta.

    Parameters:
    - delta (float): Ball radius.
    - dimension (int): Torus dimension.

    Returns:
    - float: 2*delta capped at 1 on the circle; the Euclidean ball volume for
      dimension > 1 as long as the ball does not wrap onto itself (delta <= 1/2).

    Raises:
    - BoundUndefined: dimension > 1 and delta > 1/2.
    """
    if dimension == 1:
        return min(2.0 * delta, 1.0)
    if delta > 0.5:
        raise BoundUndefined(f"ball of radius {delta} wraps around the {dimension}-torus")
    return math.pi ** (dimension / 2.0) * delta ** dimension / math.gamma(dimension / 2.0 + 1.0)


class ManifoldKind(Enum):
    TORUS = "torus"
    SPHERE = "sphere"


@icontract.invariant(lambda self: self.dimension >= 1, "Dimension must be at least 1.")
@icontract.invariant(
    lambda self: self.kind is ManifoldKind.TORUS or self.dimension >= 2,
    "A sphere needs an ambient dimension of at least 2."
)
@dataclass(frozen=True)
class ManifoldSpec:
    """
    Tag and dimension of a strategy space.

    inv: self.dimension >= 1
    inv: sphere manifolds have ambient dimension >= 2
    """
    kind: ManifoldKind
    dimension: int

    @classmethod
    def torus(cls, dimension: int = 1) -> "ManifoldSpec":
        return cls(ManifoldKind.TORUS, dimension)

    @classmethod
    def sphere(cls, dimension: int) -> "ManifoldSpec":
        return cls(ManifoldKind.SPHERE, dimension)

    @classmethod
    def parse(cls, text: str) -> "ManifoldSpec":
        """Parse ``"torus:d"`` or ``"sphere:d"``; raises ValueError on anything else."""
        match = _MANIFOLD_PATTERN.fullmatch(text)
        if match is None:
            raise ValueError(f"manifold must look like 'torus:d' or 'sphere:d', got {text!r}")
        kind, dimension = ManifoldKind(match["kind"]), int(match["dimension"])
        if dimension < (2 if kind is ManifoldKind.SPHERE else 1):
            raise ValueError(f"dimension {dimension} is too small for a {kind.value}")
        return cls(kind, dimension)

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.dimension}"

    @property
    def is_torus(self) -> bool:
        return self.kind is ManifoldKind.TORUS

    @property
    @icontract.ensure(lambda result: result > 0, "Total measure must be positive.")
    def total_measure(self) -> float:
        """1 for the unit torus; the surface area 2 pi^{d/2} / Gamma(d/2) for S^{d-1}."""
        if self.is_torus:
            return 1.0
        half = self.dimension / 2.0
        return 2.0 * math.pi ** half / math.gamma(half)

    def contains(self, coords: np.ndarray, tol: float = SPHERE_TOLERANCE) -> bool:
        """Whether every row of ``coords`` (shape ``(..., dimension)``) lies on the manifold."""
        coords = np.asarray(coords, dtype=float)
        if coords.shape[-1:] != (self.dimension,):
            return False
        if self.is_torus:
            return bool(np.all((coords >= 0.0) & (coords < 1.0)))
        return bool(np.all(np.abs(np.linalg.norm(coords, axis=-1) - 1.0) <= tol))


@icontract.invariant(lambda self: self.manifold.contains(self.coords), "Point must lie on its manifold.")
@dataclass(frozen=True, eq=False)
class Point:
    """
    A location on a strategy space.

    inv: torus coordinates lie in [0, 1); sphere points have unit norm within 1e-12
    """
    coords: np.ndarray
    manifold: ManifoldSpec

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float).reshape(-1)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)


def project_array(raw: np.ndarray, m: ManifoldSpec) -> np.ndarray:
    """
    Retract ambient coordinates of shape ``(..., dimension)`` onto the manifold.

    Raises:
    - DegenerateProjection: a sphere row is the zero vector.
    """
    raw = np.asarray(raw, dtype=float)
    if m.is_torus:
        wrapped = np.mod(raw, 1.0)
        wrapped[wrapped >= 1.0] = 0.0
        return wrapped
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateProjection("zero vector cannot be normalised onto the sphere")
    return raw / norms


@icontract.require(lambda raw, m: np.shape(raw) == (m.dimension,), "raw must have length d")
@icontract.ensure(lambda result, m: result.manifold == m)
def project(raw, m: ManifoldSpec) -> Point:
    """
    Map an ambient vector onto the manifold.

    Parameters:
    - raw (array-like): Vector of length d.
    - m (ManifoldSpec): Target manifold.

    Returns:
    - Point: Each coordinate reduced modulo 1 (torus) or raw divided by its norm (sphere).

    Raises:
    - DegenerateProjection: raw is the zero vector and m is a sphere.
    """
    return Point(project_array(np.asarray(raw, dtype=float), m), m)


def sample_coords(m: ManifoldSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. uniform points as an ``(n, dimension)`` array."""
    if m.is_torus:
        return project_array(rng.random((n, m.dimension)), m)
    return project_array(rng.standard_normal((n, m.dimension)), m)


@icontract.require(lambda m: m.is_torus, "Box initialisation is defined on the torus only")
@icontract.require(
    lambda low, high, m: len(low) == m.dimension and len(high) == m.dimension,
    "low and high must have one entry per coordinate"
)
@icontract.require(
    lambda low, high: all(0.0 <= lo < hi <= 1.0 for lo, hi in zip(low, high)),
    "Each box side must satisfy 0 <= low < high <= 1"
)
def sample_box_coords(m: ManifoldSpec, n: int, low, high, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points uniformly from the sub-box ``[low, high)`` of the torus."""
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    return project_array(low + (high - low) * rng.random((n, m.dimension)), m)


@icontract.ensure(lambda result, m: result.manifold == m)
def sample_uniform(m: ManifoldSpec, rng: np.random.Generator) -> Point:
    """
    Draw one point from the uniform distribution on the manifold.

    The torus draws i.i.d. uniform coordinates; the sphere normalises a standard Gaussian
    vector, whose law is rotation invariant.
    """
    return Point(sample_coords(m, 1, rng)[0], m)


def sample_box(m: ManifoldSpec, low, high, rng: np.random.Generator) -> Point:
    """Draw one point uniformly from the torus sub-box ``[low, high)``."""
    return Point(sample_box_coords(m, 1, low, high, rng)[0], m)


def langevin_update(
    coords: np.ndarray,
    drift: np.ndarray,
    step: float,
    noise_coeff: float,
    xi: np.ndarray,
    m: ManifoldSpec,
) -> np.ndarray:
    """
    One Euler-Maruyama step for a whole ensemble, followed by the manifold retraction.

    ``coords``, ``drift`` and ``xi`` all have shape ``(n, dimension)``; row i of ``xi`` is
    the standard Gaussian increment of particle i.

    Raises:
    - NumericalBlowUp: some drift entry is not finite.
    """
    if not np.all(np.isfinite(drift)):
        raise NumericalBlowUp()
    raw = coords + step * drift
    if noise_coeff > 0.0:
        raw = raw + math.sqrt(2.0 * step) * noise_coeff * xi
    return project_array(raw, m)


@icontract.require(lambda step: step > 0, "step must be positive")
@icontract.require(lambda noise_coeff: noise_coeff >= 0, "noise_coeff must be non-negative")
@icontract.require(lambda p, drift: np.shape(drift) == p.coords.shape, "drift must have length d")
@icontract.ensure(lambda p, result: result.manifold == p.manifold)
def langevin_step(p: Point, drift, step: float, noise_coeff: float, rng: np.random.Generator) -> Point:
    """
    Single-point Langevin update ``project(p + step*drift + sqrt(2*step)*noise_coeff*xi)``.

    Parameters:
    - p (Point): Current location.
    - drift (array-like): Drift vector of length d.
    - step (float): Step size h > 0.
    - noise_coeff (float): sqrt(1/beta); 0 switches the noise off.
    - rng (np.random.Generator): Source of the Gaussian increment xi (always drawn, so the
      stream position does not depend on noise_coeff).

    Raises:
    - NumericalBlowUp: the drift is not finite.
    """
    xi = rng.standard_normal(p.manifold.dimension)
    coords = langevin_update(
        p.coords[np.newaxis, :],
        np.asarray(drift, dtype=float)[np.newaxis, :],
        step,
        noise_coeff,
        xi[np.newaxis, :],
        p.manifold,
    )
    return Point(coords[0], p.manifold)


def distance_array(a: np.ndarray, b: np.ndarray, m: ManifoldSpec) -> np.ndarray:
    """
    Row-wise distances between two ``(n, dimension)`` arrays.

    Torus: Euclidean norm of the coordinatewise ``min(|a-b|, 1-|a-b|)``.
    Sphere: geodesic arc length.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if m.is_torus:
        gap = np.abs(a - b)
        return np.linalg.norm(np.minimum(gap, 1.0 - gap), axis=-1)
    return np.arccos(np.clip(np.sum(a * b, axis=-1), -1.0, 1.0))


@icontract.require(lambda p1, p2: p1.manifold == p2.manifold, "Both points must share a manifold")
@icontract.ensure(lambda result: result >= 0)
def distance(p1: Point, p2: Point) -> float:
    return float(distance_array(p1.coords, p2.coords, p1.manifold))


def _sphere_cap_fraction(delta: float, dimension: int) -> float:
    if delta >= math.pi:
        return 1.0
    if dimension == 2:
        return delta / math.pi
    power = dimension - 2
    cap = mpmath.quad(lambda theta: mpmath.sin(theta) ** power, [0, delta])
    whole = mpmath.quad(lambda theta: mpmath.sin(theta) ** power, [0, mpmath.pi])
    return float(cap / whole)


@icontract.require(lambda delta: delta > 0, "delta must be positive")
@icontract.ensure(lambda result: 0.0 < result <= 1.0, "A volume fraction lies in (0, 1]")
def ball_volume_fraction(m: ManifoldSpec, delta: float) -> float:
    """
    Volume of a geodesic ball of radius delta, normalised by the total measure.

    Parameters:
    - m (ManifoldSpec): The strategy space.
    - delta (float): Ball radius.

    Returns:
    - float: min(2*delta, 1) on the circle; the spherical-cap measure on S^{d-1}, from
      quadrature of sin^{d-2} over [0, delta].
    """
    if m.is_torus:
        return torus_ball_fraction(delta, m.dimension)
    return _sphere_cap_fraction(delta, m.dimension)
