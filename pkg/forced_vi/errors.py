"""Exceptions raised by forcedvi."""

from typing import Any, NamedTuple, Optional


class ForcedVIError(Exception):
    """Base class for all forcedvi errors."""

    pass


class InvalidState(ForcedVIError, ValueError):
    """A state has mismatched lengths or non-finite entries."""

    pass


class DimensionMismatch(ForcedVIError, ValueError):
    """A state or covector does not match the dimension of the system."""

    pass


class DomainError(ForcedVIError, ValueError):
    """A step size or point lies outside the domain of an evaluator."""

    pass


class SingularMassMatrix(ForcedVIError):
    """The second fiber derivative fails the regularity thresholds."""

    pass


class NoConvergence(ForcedVIError):
    """The flow oracle hit its step cap before two estimates agreed."""

    pass


class QuadratureNoConvergence(ForcedVIError):
    """Adaptive quadrature exceeded its bisection depth."""

    pass


class SingularJacobian(ForcedVIError):
    """A Newton linear solve failed."""

    pass


class NewtonNoConvergence(ForcedVIError):
    """Newton iteration stopped without meeting the residual tolerance."""

    def __init__(self, message: str, residual_norm: float, iterations: int, label: str = ""):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations
        self.label = label


class DegenerateVariationSpace(ForcedVIError):
    """The fixed-endpoint variation space does not have dimension n."""

    def __init__(self, message: str, dimension: int):
        super().__init__(message)
        self.dimension = dimension


class TrajectoryAborted(ForcedVIError):
    """A trajectory run stopped at a failing step.

    The steps computed before the failure are kept in ``trajectory``.
    """

    def __init__(self, message: str, trajectory: Any, cause: Optional[BaseException] = None):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause


class SchemaViolation(NamedTuple):
    """One configuration problem at a dotted field path."""

    path: str
    message: str


class SchemaError(ForcedVIError, ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, violations: list[SchemaViolation]):
        self.violations = list(violations)
        summary = "; ".join(f"{v.path}: {v.message}" for v in self.violations)
        super().__init__(f"Invalid configuration: {summary}")
