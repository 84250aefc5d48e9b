"""
Payoff kernels K(x, y) of the two-player game, with exact gradients.

Array methods take ambient coordinates (``(n, d)`` arrays) and perform no manifold check,
so finite-difference probes may step off the sphere. The point-level functions
``evaluate``/``grad_x``/``grad_y`` check that both points live on the kernel's manifold.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum

import icontract
import numpy as np

from src.errors import ManifoldMismatch
from src.manifold import ManifoldSpec, Point

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


class KernelKind(Enum):
    SINE_TORUS = "sine_torus"
    POLYNOMIAL_SPHERE = "poly_sphere"


@dataclass(frozen=True)
class KernelConstants:
    """Bound C_K of |K| and a joint Lipschitz constant Lip(K), as used by the epsilon-Nash bound."""
    bound: float
    lipschitz: float


@icontract.invariant(lambda self: math.isfinite(self._scale), "Kernel scale must be finite.")
class Kernel(ABC):
    """
    Base class of payoff kernels. Subclasses are immutable after construction.

    inv: math.isfinite(self.scale)
    """

    kind: KernelKind

    def __init__(self, manifold: ManifoldSpec, scale: float = 1.0):
        self._manifold = manifold
        self._scale = float(scale)

    @property
    def manifold(self) -> ManifoldSpec:
        return self._manifold

    @property
    def scale(self) -> float:
        return self._scale

    @abstractmethod
    def values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Row-wise K(x_i, y_i) for two ``(n, d)`` arrays."""

    @abstractmethod
    def grad_x_values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Row-wise dK/dx(x_i, y_i), shape ``(n, d)``."""

    @abstractmethod
    def grad_y_values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Row-wise dK/dy(x_i, y_i), shape ``(n, d)``."""

    @abstractmethod
    def pairwise(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Payoff matrix ``K(x_i, y_j)`` of shape ``(n_x, n_y)``."""

    @abstractmethod
    def mean_grad_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``(1/n_y) sum_j dK/dx(x_i, y_j)`` for every row x_i, shape ``(n_x, d)``."""

    @abstractmethod
    def mean_grad_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``(1/n_x) sum_j dK/dy(x_j, y_i)`` for every row y_i, shape ``(n_y, d)``."""

    @abstractmethod
    def constants(self) -> KernelConstants:
        """Valid (not necessarily tight) bounds C_K and Lip(K) on the manifold."""

    def describe(self) -> dict:
        return {"type": self.kind.value, "manifold": str(self.manifold), "scale": self.scale}


class SineTorusKernel(Kernel):
    """K(x, y) = scale * sin(2 pi x) sin(2 pi y) on the circle R/Z."""

    kind = KernelKind.SINE_TORUS

    def __init__(self, scale: float = 1.0):
        super().__init__(ManifoldSpec.torus(1), scale)

    def values(self, x, y):
        return self.scale * np.sin(TWO_PI * x[:, 0]) * np.sin(TWO_PI * y[:, 0])

    def grad_x_values(self, x, y):
        return self.scale * TWO_PI * np.cos(TWO_PI * x) * np.sin(TWO_PI * y)

    def grad_y_values(self, x, y):
        return self.scale * TWO_PI * np.sin(TWO_PI * x) * np.cos(TWO_PI * y)

    def pairwise(self, x, y):
        return self.scale * np.outer(np.sin(TWO_PI * x[:, 0]), np.sin(TWO_PI * y[:, 0]))

    def mean_grad_x(self, x, y):
        # separable: the y-average collapses to a single number
        return self.scale * TWO_PI * np.cos(TWO_PI * x) * np.mean(np.sin(TWO_PI * y[:, 0]))

    def mean_grad_y(self, x, y):
        return self.scale * TWO_PI * np.mean(np.sin(TWO_PI * x[:, 0])) * np.cos(TWO_PI * y)

    def constants(self):
        magnitude = abs(self.scale)
        return KernelConstants(bound=magnitude, lipschitz=TWO_PI * math.sqrt(2.0) * magnitude)


def _square_matrices(matrices) -> bool:
    shapes = {np.shape(a) for a in matrices}
    if len(shapes) != 1:
        return False
    (shape,) = shapes
    return len(shape) == 2 and shape[0] == shape[1] and shape[0] >= 2


class PolynomialSphereKernel(Kernel):
    """
    K(x, y) = scale * (x^T A0 x + x^T A1 y + y^T A2 y + y^T A3 (x^2)) on S^{d-1},
    where (x^2) is the element-wise square of x.

    The matrices are copied and frozen on construction.
    """

    kind = KernelKind.POLYNOMIAL_SPHERE

    @icontract.require(lambda matrices: len(matrices) == 4, "Exactly four matrices A0..A3 are required")
    @icontract.require(lambda matrices: _square_matrices(matrices), "All coefficient matrices must be d x d with d >= 2.")
    @icontract.require(
        lambda matrices: all(np.all(np.isfinite(np.asarray(a, dtype=float))) for a in matrices),
        "All coefficient matrices must be finite."
    )
    def __init__(self, matrices, scale: float = 1.0, matrix_seed: int | None = None):
        self._matrices = tuple(np.array(a, dtype=float) for a in matrices)
        for a in self._matrices:
            a.setflags(write=False)
        self._matrix_seed = matrix_seed
        super().__init__(ManifoldSpec.sphere(self._matrices[0].shape[0]), scale)

    @classmethod
    @icontract.require(lambda d: d >= 2, "The sphere needs an ambient dimension of at least 2")
    def gaussian(cls, d: int, matrix_seed: int, scale: float = 1.0) -> "PolynomialSphereKernel":
        """Matrices with i.i.d. N(0, 1) entries divided by d, drawn from ``matrix_seed``."""
        rng = np.random.default_rng(matrix_seed)
        matrices = [rng.standard_normal((d, d)) / d for _ in range(4)]
        return cls(matrices, scale=scale, matrix_seed=matrix_seed)

    @property
    def dimension(self) -> int:
        return self.manifold.dimension

    @property
    def matrices(self) -> tuple:
        return self._matrices

    def values(self, x, y):
        a0, a1, a2, a3 = self._matrices
        quad_x = np.einsum("ni,ij,nj->n", x, a0, x)
        bilinear = np.einsum("ni,ij,nj->n", x, a1, y)
        quad_y = np.einsum("ni,ij,nj->n", y, a2, y)
        cubic = np.einsum("ni,ij,nj->n", y, a3, x * x)
        return self.scale * (quad_x + bilinear + quad_y + cubic)

    def grad_x_values(self, x, y):
        a0, a1, _, a3 = self._matrices
        return self.scale * (x @ (a0 + a0.T) + y @ a1.T + 2.0 * x * (y @ a3))

    def grad_y_values(self, x, y):
        _, a1, a2, a3 = self._matrices
        return self.scale * (x @ a1 + y @ (a2 + a2.T) + (x * x) @ a3.T)

    def pairwise(self, x, y):
        a0, a1, a2, a3 = self._matrices
        quad_x = np.einsum("ni,ij,nj->n", x, a0, x)
        quad_y = np.einsum("ni,ij,nj->n", y, a2, y)
        return self.scale * (quad_x[:, np.newaxis] + x @ a1 @ y.T + quad_y[np.newaxis, :] + (x * x) @ a3.T @ y.T)

    def mean_grad_x(self, x, y):
        # dK/dx is affine in y, so averaging over y only needs the mean of y
        a0, a1, _, a3 = self._matrices
        y_mean = np.mean(y, axis=0)
        return self.scale * (x @ (a0 + a0.T) + (a1 @ y_mean)[np.newaxis, :] + 2.0 * x * (y_mean @ a3))

    def mean_grad_y(self, x, y):
        _, a1, a2, a3 = self._matrices
        x_mean = np.mean(x, axis=0)
        x_sq_mean = np.mean(x * x, axis=0)
        return self.scale * ((x_mean @ a1)[np.newaxis, :] + y @ (a2 + a2.T) + (a3 @ x_sq_mean)[np.newaxis, :])

    def constants(self):
        a0, a1, a2, a3 = (np.linalg.norm(a, 2) for a in self._matrices)
        magnitude = abs(self.scale)
        # |x|, |y| and |x^2| are all at most 1 on (and inside) the unit sphere
        bound = magnitude * (a0 + a1 + a2 + a3)
        grad_x_bound = 2.0 * a0 + a1 + 2.0 * a3
        grad_y_bound = a1 + 2.0 * a2 + a3
        return KernelConstants(bound=float(bound), lipschitz=float(magnitude * math.hypot(grad_x_bound, grad_y_bound)))

    def describe(self):
        description = super().describe()
        description["matrix_seed"] = self._matrix_seed
        return description


def build_kernel(kind: KernelKind, d: int = 1, matrix_seed: int = 0, scale: float = 1.0) -> Kernel:
    if kind is KernelKind.SINE_TORUS:
        return SineTorusKernel(scale)
    return PolynomialSphereKernel.gaussian(d, matrix_seed, scale)


def _check_points(k: Kernel, x: Point, y: Point):
    for point in (x, y):
        if point.manifold != k.manifold:
            raise ManifoldMismatch(k.manifold, point.manifold)


def evaluate(k: Kernel, x: Point, y: Point) -> float:
    """
    K(x, y) for two points of the kernel's manifold.

    Raises:
    - ManifoldMismatch: x or y lives on another manifold.
    """
    _check_points(k, x, y)
    return float(k.values(x.coords[np.newaxis, :], y.coords[np.newaxis, :])[0])


@icontract.ensure(lambda x, result: result.shape == x.coords.shape)
def grad_x(k: Kernel, x: Point, y: Point) -> np.ndarray:
    """Exact dK/dx at (x, y)."""
    _check_points(k, x, y)
    return k.grad_x_values(x.coords[np.newaxis, :], y.coords[np.newaxis, :])[0]


@icontract.ensure(lambda y, result: result.shape == y.coords.shape)
def grad_y(k: Kernel, x: Point, y: Point) -> np.ndarray:
    """Exact dK/dy at (x, y)."""
    _check_points(k, x, y)
    return k.grad_y_values(x.coords[np.newaxis, :], y.coords[np.newaxis, :])[0]


@icontract.ensure(lambda result: result.bound >= 0 and result.lipschitz >= 0)
def constants(k: Kernel) -> KernelConstants:
    return k.constants()
