"""
Exceptions raised by the solvers, the grid oracle and the experiment harness.

Contract violations (``icontract.ViolationError``) signal misuse of an API. The classes
below signal conditions a correct caller can still run into: a particle system that
diverges, an oracle that does not converge, a config file with a typo.
"""


class QSLGDError(Exception):
    """Base class for every error raised by this project."""


class DegenerateProjection(QSLGDError):
    def __init__(self, detail: str = ""):
        super().__init__(f"degenerate projection{': ' + detail if detail else ''}")


class ManifoldMismatch(QSLGDError):
    def __init__(self, expected, received):
        self.expected = expected
        self.received = received
        super().__init__(f"manifold mismatch: expected {expected}, received {received}")


class NumericalBlowUp(QSLGDError):
    """
    Raised when a drift or an iterate becomes non-finite.

    Attributes:
    - iteration (int | None): Index of the update (or outer iteration) that blew up.
    - phase (str | None): Which part of the algorithm was running ("lgda", "warm-up", "inner", "snapshot", "outer").
    """

    def __init__(self, iteration: int | None = None, phase: str | None = None):
        self.iteration = iteration
        self.phase = phase
        where = []
        if phase is not None:
            where.append(f"phase {phase}")
        if iteration is not None:
            where.append(f"iteration {iteration}")
        super().__init__("numerical blow-up" + (f" ({', '.join(where)})" if where else ""))

    def at(self, iteration: int, phase: str | None = None) -> "NumericalBlowUp":
        """Return a copy re-labelled with the caller's iteration index."""
        return NumericalBlowUp(iteration, phase if phase is not None else self.phase)


class NoConvergence(QSLGDError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3e})")


class CFLViolation(QSLGDError):
    def __init__(self, dt: float, bound: float):
        self.dt = dt
        self.bound = bound
        super().__init__(f"CFL violation: dt={dt:.3e} exceeds the stability bound {bound:.3e}")


class BoundUndefined(QSLGDError):
    def __init__(self, detail: str = ""):
        super().__init__(f"bound undefined{': ' + detail if detail else ''}")


class ConfigError(QSLGDError):
    """Invalid experiment or oracle configuration; ``field`` is the dotted path of the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
