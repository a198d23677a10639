"""Continuous forced mechanical systems on R^n.

A system is a Lagrangian L(q, v) and a force field f(q, v) whose value is a
covector paired with position variations dq. Every pointwise quantity the
integrators need (fiber derivatives, the Euler–Lagrange acceleration, the
energy) is computed here, from analytic derivatives when the system supplies
them and from central finite differences otherwise.
"""

from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Callable, Mapping, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg

from forced_vi import newton, numdiff
from forced_vi.errors import DimensionMismatch, InvalidState, SingularMassMatrix
from forced_vi.settings import DEFAULT_SETTINGS, SolverSettings

Params = Mapping[str, float]
ScalarEvaluator = Callable[[np.ndarray, np.ndarray, Params], float]
VectorEvaluator = Callable[[np.ndarray, np.ndarray, Params], np.ndarray]
MatrixEvaluator = Callable[[np.ndarray, np.ndarray, Params], np.ndarray]


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.array(x, dtype=float))
    if arr.ndim != 1:
        raise InvalidState(f"{name} must be a flat vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class StateTQ:
    """A tangent vector v_q in chart coordinates (q, v)."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = _as_vector(self.q, "q")
        v = _as_vector(self.v, "v")
        if q.size < 1 or q.size != v.size:
            raise InvalidState(f"q and v must have the same positive length, got {q.size} and {v.size}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise InvalidState("State entries must be finite")
        q.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.q.size

    def vector(self) -> np.ndarray:
        """Concatenated coordinates (q, v)."""
        return np.concatenate([self.q, self.v])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "StateTQ":
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size % 2:
            raise InvalidState(f"Cannot split a vector of shape {x.shape} into (q, v)")
        n = x.size // 2
        return cls(x[:n], x[n:])

    def __repr__(self) -> str:
        return f"StateTQ(q={self.q.tolist()}, v={self.v.tolist()})"


@dataclass(frozen=True, eq=False)
class SystemFMS:
    """A regular forced mechanical system on R^n.

    Evaluators take (q, v, params). The optional derivative evaluators replace
    finite differences when present: dL_dq and dL_dv return length-n vectors,
    d2L_dvdv returns the n x n fiber Hessian, d2L_dvdq returns the matrix with
    entries d2L/dv_i dq_j, d2L_dqdq the position Hessian, and
    acceleration_jacobian and force_jacobian return the pairs (da/dq, da/dv)
    and (df/dq, df/dv). closed_form_flow(t, q, v, params) -> (q, v) and
    closed_form_tangent(t, q, v, params) -> 2n x 2n matrix register an exact
    flow for the analytic oracle.
    """

    n: int
    lagrangian: ScalarEvaluator
    force: VectorEvaluator
    params: Params = field(default_factory=dict)
    name: str = "custom"
    dL_dq: Optional[VectorEvaluator] = None
    dL_dv: Optional[VectorEvaluator] = None
    d2L_dvdv: Optional[MatrixEvaluator] = None
    d2L_dvdq: Optional[MatrixEvaluator] = None
    d2L_dqdq: Optional[MatrixEvaluator] = None
    force_jacobian: Optional[Callable[[np.ndarray, np.ndarray, Params], tuple]] = None
    acceleration_jacobian: Optional[Callable[[np.ndarray, np.ndarray, Params], tuple]] = None
    closed_form_flow: Optional[Callable] = None
    closed_form_tangent: Optional[Callable] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"Dimension must be a positive integer, got {self.n}")
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    @property
    def has_closed_form_flow(self) -> bool:
        return self.closed_form_flow is not None and self.closed_form_tangent is not None

    def without_derivatives(self) -> "SystemFMS":
        """Copy of the system that differentiates L by finite differences."""
        return replace(
            self,
            dL_dq=None,
            dL_dv=None,
            d2L_dvdv=None,
            d2L_dvdq=None,
            d2L_dqdq=None,
            force_jacobian=None,
            acceleration_jacobian=None,
        )


class RegularityReport(NamedTuple):
    min_abs_det: float
    max_condition_number: float
    ok: bool


def _check_dimension(sys: SystemFMS, s: StateTQ) -> None:
    if s.n != sys.n:
        raise DimensionMismatch(f"System '{sys.name}' has dimension {sys.n}, state has {s.n}")


def _check_covector(sys: SystemFMS, value, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape != (sys.n,):
        raise DimensionMismatch(f"{what} of '{sys.name}' returned shape {arr.shape}, expected ({sys.n},)")
    return arr


def eval_lagrangian(sys: SystemFMS, s: StateTQ) -> float:
    """L(q, v)."""
    _check_dimension(sys, s)
    return float(sys.lagrangian(s.q, s.v, sys.params))


def eval_force(sys: SystemFMS, s: StateTQ) -> np.ndarray:
    """The force field f(q, v) as a covector acting on dq."""
    _check_dimension(sys, s)
    return _check_covector(sys, sys.force(s.q, s.v, sys.params), "force")


def horizontal_force(sys: SystemFMS, s: StateTQ) -> np.ndarray:
    """The horizontal 1-form (dq, dv) -> f(q, v)(dq) as a length-2n covector."""
    return np.concatenate([eval_force(sys, s), np.zeros(sys.n)])


def fiber_derivative(sys: SystemFMS, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """The Legendre transform FL(q, v) = dL/dv."""
    _check_dimension(sys, s)
    if sys.dL_dv is not None:
        return _check_covector(sys, sys.dL_dv(s.q, s.v, sys.params), "dL_dv")
    return numdiff.gradient(lambda v: sys.lagrangian(s.q, v, sys.params), s.v, settings.fd_step_scale)


def position_gradient(sys: SystemFMS, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """dL/dq."""
    _check_dimension(sys, s)
    if sys.dL_dq is not None:
        return _check_covector(sys, sys.dL_dq(s.q, s.v, sys.params), "dL_dq")
    return numdiff.gradient(lambda q: sys.lagrangian(q, s.v, sys.params), s.q, settings.fd_step_scale)


def fiber_hessian(sys: SystemFMS, s: StateTQ) -> np.ndarray:
    """The second fiber derivative F2L(q, v) as a symmetric n x n matrix."""
    _check_dimension(sys, s)
    if sys.d2L_dvdv is not None:
        H = np.atleast_2d(np.asarray(sys.d2L_dvdv(s.q, s.v, sys.params), dtype=float))
    else:
        H = numdiff.hessian(lambda v: sys.lagrangian(s.q, v, sys.params), s.v)
    if H.shape != (sys.n, sys.n):
        raise DimensionMismatch(f"Fiber Hessian of '{sys.name}' has shape {H.shape}")
    return 0.5 * (H + H.T)


def mixed_hessian(sys: SystemFMS, s: StateTQ) -> np.ndarray:
    """Matrix of d2L / dv_i dq_j."""
    _check_dimension(sys, s)
    if sys.d2L_dvdq is not None:
        return np.atleast_2d(np.asarray(sys.d2L_dvdq(s.q, s.v, sys.params), dtype=float))
    n = sys.n
    H = numdiff.hessian(lambda z: sys.lagrangian(z[:n], z[n:], sys.params), s.vector())
    return H[n:, :n]


def position_hessian(sys: SystemFMS, s: StateTQ) -> np.ndarray:
    """d2L / dq2 as a symmetric n x n matrix."""
    _check_dimension(sys, s)
    if sys.d2L_dqdq is not None:
        H = np.atleast_2d(np.asarray(sys.d2L_dqdq(s.q, s.v, sys.params), dtype=float))
    else:
        H = numdiff.hessian(lambda q: sys.lagrangian(q, s.v, sys.params), s.q)
    return 0.5 * (H + H.T)


def eval_force_jacobian(
    sys: SystemFMS, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS
) -> tuple[np.ndarray, np.ndarray]:
    """(df/dq, df/dv), each n x n."""
    _check_dimension(sys, s)
    if sys.force_jacobian is not None:
        dq, dv = sys.force_jacobian(s.q, s.v, sys.params)
        return np.atleast_2d(np.asarray(dq, dtype=float)), np.atleast_2d(np.asarray(dv, dtype=float))
    n = sys.n
    J = numdiff.jacobian(lambda z: sys.force(z[:n], z[n:], sys.params), s.vector(), settings.fd_step_scale)
    return J[:, :n], J[:, n:]


def _mass_matrix_measures(H: np.ndarray) -> tuple[float, float]:
    abs_det = abs(float(np.linalg.det(H)))
    singular_values = np.linalg.svd(H, compute_uv=False)
    if singular_values[-1] == 0.0:
        return abs_det, float("inf")
    return abs_det, float(singular_values[0] / singular_values[-1])


def _is_regular(abs_det: float, cond: float, settings: SolverSettings) -> bool:
    return abs_det > settings.regularity_det_floor and cond < settings.regularity_cond_ceiling


def check_regularity(
    sys: SystemFMS, samples: Sequence[StateTQ], settings: SolverSettings = DEFAULT_SETTINGS
) -> RegularityReport:
    """Check that F2L is nondegenerate at every sampled state.

    Degenerate systems produce ok=False rather than an exception.
    """
    if not samples:
        raise ValueError("check_regularity needs at least one sample state")
    dets, conds = [], []
    for s in samples:
        abs_det, cond = _mass_matrix_measures(fiber_hessian(sys, s))
        dets.append(abs_det)
        conds.append(cond)
    min_det, max_cond = min(dets), max(conds)
    return RegularityReport(min_det, max_cond, _is_regular(min_det, max_cond, settings))


def el_acceleration(sys: SystemFMS, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Acceleration a solving F2L a = f + dL/dq - (d2L/dv dq) v.

    Raises:
        SingularMassMatrix: If F2L fails the regularity thresholds at s
    """
    H = fiber_hessian(sys, s)
    abs_det, cond = _mass_matrix_measures(H)
    if not _is_regular(abs_det, cond, settings):
        raise SingularMassMatrix(
            f"F2L of '{sys.name}' is singular at {s!r}: |det| = {abs_det:.3e}, cond = {cond:.3e}"
        )
    rhs = eval_force(sys, s) + position_gradient(sys, s, settings) - mixed_hessian(sys, s) @ s.v
    return scipy.linalg.solve(H, rhs, assume_a="sym")


def energy(sys: SystemFMS, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """E_L(v) = FL(v)(v) - L(v)."""
    return float(fiber_derivative(sys, s, settings) @ s.v) - eval_lagrangian(sys, s)


def velocity_from_momentum(
    sys: SystemFMS,
    q: np.ndarray,
    p: np.ndarray,
    settings: SolverSettings = DEFAULT_SETTINGS,
    guess: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Invert the Legendre transform at q: find v with FL(q, v) = p."""
    q = _as_vector(q, "q")
    p = _as_vector(p, "p")
    v0 = np.zeros_like(q) if guess is None else _as_vector(guess, "guess")
    result = newton.solve(
        lambda v: fiber_derivative(sys, StateTQ(q, v), settings) - p,
        v0,
        settings,
        jacobian=lambda v: fiber_hessian(sys, StateTQ(q, v)),
        label="legendre inverse",
    )
    return result.x
