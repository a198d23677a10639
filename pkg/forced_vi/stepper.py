"""One-step maps and trajectories of forced discrete mechanical systems."""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from forced_vi import newton
from forced_vi.disc_qq import (
    DiscreteDataQQ,
    check_admissible,
    discrete_legendre_minus,
    discrete_legendre_plus,
    partial_derivatives,
)
from forced_vi.disc_tq import (
    DiscreteDataTQ,
    DiscretizationTQ,
    boundary_jacobian,
    boundary_minus,
    boundary_plus,
    discrete_form,
)
from forced_vi.errors import DegenerateVariationSpace, DomainError, ForcedVIError, TrajectoryAborted
from forced_vi.fms_core import StateTQ, SystemFMS, el_acceleration, fiber_derivative
from forced_vi.settings import DEFAULT_SETTINGS, SolverSettings

logger = logging.getLogger(__name__)


class StepStats(NamedTuple):
    iterations: int
    guess_distance: float
    retried: bool


@dataclass
class TrajectoryDiscrete:
    """A discrete path q_0..q_N with per-step solver diagnostics.

    residual_norms[k] is the residual accepted when solving for step k + 2
    (Q x Q) or step k + 1 (TQ). velocities is filled by TQ runs only.
    """

    h: float
    positions: list[np.ndarray]
    residual_norms: list[float] = field(default_factory=list)
    solver_stats: list[StepStats] = field(default_factory=list)
    velocities: Optional[list[np.ndarray]] = None

    @property
    def N(self) -> int:
        return len(self.positions) - 1

    def positions_array(self) -> np.ndarray:
        return np.vstack(self.positions)


def del_residual(d: DiscreteDataQQ, h: float, q0, q1, q2, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """D2 L_d(q0, q1) + D1 L_d(q1, q2) + f_d^+(q0, q1) + f_d^-(q1, q2)."""
    h, q0, q1 = check_admissible(d, h, q0, q1)
    h, q1, q2 = check_admissible(d, h, q1, q2)
    _, D2 = partial_derivatives(d, h, q0, q1, settings)
    D1, _ = partial_derivatives(d, h, q1, q2, settings)
    return D2 + D1 + np.asarray(d.f_d_plus(h, q0, q1), dtype=float) + np.asarray(d.f_d_minus(h, q1, q2), dtype=float)


def solve_step_qq(
    d: DiscreteDataQQ,
    h: float,
    q0,
    q1,
    settings: SolverSettings = DEFAULT_SETTINGS,
    sys: Optional[SystemFMS] = None,
) -> tuple[newton.NewtonResult, bool]:
    """Solve the discrete Lagrange-d'Alembert equations for q2.

    Newton starts from 2 q1 - q0, with the data's step_jacobian when it has
    one and finite differences otherwise. When it fails and a system is given,
    one retry starts from 2 q1 - q0 + h^2 a with a the acceleration at
    (q1, (q1 - q0)/h).

    Returns:
        The Newton result and whether the retry was needed
    """
    h, q0, q1 = check_admissible(d, h, q0, q1)

    def residual(q2):
        return del_residual(d, h, q0, q1, q2, settings)

    step_jacobian = d.step_jacobian
    jacobian = None if step_jacobian is None else (lambda q2: np.atleast_2d(step_jacobian(h, q1, q2)))

    guess = 2.0 * q1 - q0
    try:
        return newton.solve(residual, guess, settings, jacobian=jacobian, label="del step"), False
    except ForcedVIError as first:
        if sys is None:
            raise
        logger.warning("DEL step failed at h=%g (%s); retrying from the acceleration predictor", h, first)
        a = el_acceleration(sys, StateTQ(q1, (q1 - q0) / h), settings)
        return newton.solve(residual, guess + h * h * a, settings, jacobian=jacobian, label="del step"), True


def step_qq(d: DiscreteDataQQ, h: float, q0, q1, settings: SolverSettings = DEFAULT_SETTINGS, sys: Optional[SystemFMS] = None) -> np.ndarray:
    """q2 with del_residual(d, h, q0, q1, q2) = 0."""
    return solve_step_qq(d, h, q0, q1, settings, sys)[0].x


def variation_basis(
    d: DiscretizationTQ, h: float, s: StateTQ, s_next: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS
) -> np.ndarray:
    """Basis (4n x n) of the variations (dv, dv_next) that fix both outer endpoints.

    The constraints are T boundary_minus(dv) = 0, T boundary_plus(dv_next) = 0
    and T boundary_plus(dv) = T boundary_minus(dv_next). The null space comes
    from a column-pivoted QR; it is then normalized so that the shared
    midpoint variation of column i is the i-th unit vector.

    Raises:
        DegenerateVariationSpace: If the space does not have dimension n
    """
    n = s.n
    J_minus, J_plus = boundary_jacobian(d, h, s, settings)
    J_minus_next, J_plus_next = boundary_jacobian(d, h, s_next, settings)
    zeros = np.zeros((n, 2 * n))
    C = np.block([[J_minus, zeros], [zeros, J_plus_next], [J_plus, -J_minus_next]])

    Q, R, _ = scipy.linalg.qr(C.T, pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > diag[0] * 1e3 * np.finfo(float).eps * C.shape[1])) if diag[0] > 0 else 0
    if rank != 3 * n:
        raise DegenerateVariationSpace(
            f"Fixed-endpoint variations have dimension {4 * n - rank}, expected {n} (h={h})", 4 * n - rank
        )
    null = Q[:, 3 * n :]
    midpoint = J_plus @ null[: 2 * n]
    try:
        return null @ scipy.linalg.inv(midpoint)
    except (np.linalg.LinAlgError, ValueError):
        logger.debug("variation basis left unnormalized at h=%g", h)
        return null


def _step_tq_residual(data: DiscreteDataTQ, d: DiscretizationTQ, h: float, s: StateTQ, settings: SolverSettings):
    n = s.n
    target = boundary_plus(d, h, s)
    form_s = discrete_form(data, h, s, settings)

    def residual(z: np.ndarray) -> np.ndarray:
        s_next = StateTQ(z[:n], z[n:])
        basis = variation_basis(d, h, s, s_next, settings)
        critical = form_s @ basis[: 2 * n] + discrete_form(data, h, s_next, settings) @ basis[2 * n :]
        return np.concatenate([target - boundary_minus(d, h, s_next), critical])

    return residual


def solve_step_tq(
    data: DiscreteDataTQ,
    d: DiscretizationTQ,
    h: float,
    s: StateTQ,
    settings: SolverSettings = DEFAULT_SETTINGS,
    sys: Optional[SystemFMS] = None,
) -> tuple[newton.NewtonResult, bool]:
    """Solve the matching and criticality equations of one TQ step.

    The unknown is the next state s_next. Matching asks boundary_plus(s) =
    boundary_minus(s_next); criticality asks (dL_cp + f_cp)(s)(dv) +
    (dL_cp + f_cp)(s_next)(dv_next) = 0 for every fixed-endpoint variation
    (dv, dv_next). Newton starts from (boundary_plus(s), v) and retries once
    from (boundary_plus(s), v + h a) when a system is given.
    """
    h = float(h)
    if h == 0.0:
        raise DomainError("step_tq needs h != 0")
    residual = _step_tq_residual(data, d, h, s, settings)
    q_next = boundary_plus(d, h, s)
    try:
        return newton.solve(residual, np.concatenate([q_next, s.v]), settings, label="tq step"), False
    except ForcedVIError as first:
        if sys is None:
            raise
        logger.warning("TQ step failed at h=%g (%s); retrying from the acceleration predictor", h, first)
        v_next = s.v + h * el_acceleration(sys, s, settings)
        return newton.solve(residual, np.concatenate([q_next, v_next]), settings, label="tq step"), True


def step_tq(
    data: DiscreteDataTQ,
    d: DiscretizationTQ,
    h: float,
    s: StateTQ,
    settings: SolverSettings = DEFAULT_SETTINGS,
    sys: Optional[SystemFMS] = None,
) -> StateTQ:
    """The discrete flow of (data, d) on TQ applied to s."""
    return StateTQ.from_vector(solve_step_tq(data, d, h, s, settings, sys)[0].x)


def initialize_from_state(
    d: DiscreteDataQQ, sys: SystemFMS, h: float, q0, v0, settings: SolverSettings = DEFAULT_SETTINGS
) -> np.ndarray:
    """q1 whose forced discrete momentum at q0 matches FL(q0, v0)."""
    start = StateTQ(q0, v0)
    momentum = fiber_derivative(sys, start, settings)
    result = newton.solve(
        lambda q1: momentum - discrete_legendre_minus(d, h, start.q, q1, settings),
        start.q + h * start.v,
        settings,
        label="legendre match",
    )
    return result.x


def run_trajectory(
    d: DiscreteDataQQ,
    h: float,
    q0,
    q1,
    N: int,
    settings: SolverSettings = DEFAULT_SETTINGS,
    sys: Optional[SystemFMS] = None,
) -> TrajectoryDiscrete:
    """Iterate step_qq from (q0, q1) up to q_N.

    Raises:
        ValueError: If N < 2
        TrajectoryAborted: On a failing step, carrying the positions computed so far
    """
    if N < 2:
        raise ValueError(f"N must be at least 2, got {N}")
    h, q0, q1 = check_admissible(d, h, q0, q1)
    trajectory = TrajectoryDiscrete(h=h, positions=[q0, q1])
    for k in range(2, N + 1):
        try:
            result, retried = solve_step_qq(d, h, trajectory.positions[-2], trajectory.positions[-1], settings, sys)
        except ForcedVIError as e:
            raise TrajectoryAborted(f"Step {k} of {N} failed: {e}", trajectory, e) from e
        trajectory.positions.append(result.x)
        trajectory.residual_norms.append(result.residual_norm)
        trajectory.solver_stats.append(StepStats(result.iterations, result.guess_distance, retried))
    return trajectory


def run_trajectory_tq(
    data: DiscreteDataTQ,
    d: DiscretizationTQ,
    h: float,
    s0: StateTQ,
    N: int,
    settings: SolverSettings = DEFAULT_SETTINGS,
    sys: Optional[SystemFMS] = None,
) -> TrajectoryDiscrete:
    """Iterate step_tq N times from s0, keeping positions and velocities."""
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    trajectory = TrajectoryDiscrete(h=float(h), positions=[s0.q.copy()], velocities=[s0.v.copy()])
    state = s0
    for k in range(1, N + 1):
        try:
            result, retried = solve_step_tq(data, d, h, state, settings, sys)
        except ForcedVIError as e:
            raise TrajectoryAborted(f"Step {k} of {N} failed: {e}", trajectory, e) from e
        state = StateTQ.from_vector(result.x)
        trajectory.positions.append(state.q.copy())
        trajectory.velocities.append(state.v.copy())
        trajectory.residual_norms.append(result.residual_norm)
        trajectory.solver_stats.append(StepStats(result.iterations, result.guess_distance, retried))
    return trajectory


def trajectory_residuals(d: DiscreteDataQQ, trajectory: TrajectoryDiscrete, settings: SolverSettings = DEFAULT_SETTINGS) -> list[float]:
    """Max-norm DEL residuals at the interior points, as momentum mismatches.

    Uses plus-momentum of (q_{k-1}, q_k) minus minus-momentum of (q_k, q_{k+1}),
    which expands to the same expression as del_residual.
    """
    h, q = trajectory.h, trajectory.positions
    return [
        float(
            np.max(
                np.abs(
                    discrete_legendre_plus(d, h, q[k - 1], q[k], settings)
                    - discrete_legendre_minus(d, h, q[k], q[k + 1], settings)
                )
            )
        )
        for k in range(1, len(q) - 1)
    ]
