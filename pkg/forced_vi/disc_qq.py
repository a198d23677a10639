"""Discrete data on Q x Q and its correspondence with discrete data on TQ.

Q x Q data is a discrete Lagrangian L_d(h, q0, q1) with a discrete force split
into f_d^-(h, q0, q1), a covector at q0, and f_d^+(h, q0, q1), a covector at q1.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from forced_vi import newton, numdiff, quadrature
from forced_vi.continuous_flow import FlowOracle, flow_jacobian, flow_many
from forced_vi.disc_tq import (
    DiscreteDataTQ,
    DiscretizationTQ,
    boundary_jacobian,
    boundary_pm,
    lagrangian_gradient,
)
from forced_vi.errors import (
    DimensionMismatch,
    DomainError,
    ForcedVIError,
    SingularJacobian,
)
from forced_vi.fms_core import (
    StateTQ,
    SystemFMS,
    el_acceleration,
    eval_force,
    eval_force_jacobian,
    eval_lagrangian,
    fiber_derivative,
    fiber_hessian,
    mixed_hessian,
    position_gradient,
    position_hessian,
)
from forced_vi.settings import DEFAULT_SETTINGS, SolverSettings

logger = logging.getLogger(__name__)

PairScalar = Callable[[float, np.ndarray, np.ndarray], float]
PairCovector = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
PairMatrix = Callable[[float, np.ndarray, np.ndarray], np.ndarray]

INVERSE_METHODS = ("implicit", "finite_difference")


def _nonzero_step(h: float, q0: np.ndarray, q1: np.ndarray) -> bool:
    return h != 0.0


@dataclass(frozen=True, eq=False)
class DiscreteDataQQ:
    """Discrete Lagrangian and split discrete force on Q x Q.

    D1 and D2, when present, are the exact partial derivatives of L_d with
    respect to q0 and q1. step_jacobian, when present, is the n x n matrix
    d/dq1 of D1 L_d(h, q0, q1) + f_d^-(h, q0, q1), the only part of the DEL
    residual that moves with the unknown position. ``admissible`` reports
    where the evaluators are defined; h = 0 is never admissible for the
    built-in data.
    """

    L_d: PairScalar
    f_d_minus: PairCovector
    f_d_plus: PairCovector
    declared_order: Optional[int] = None
    kind: str = "custom"
    admissible: Callable[[float, np.ndarray, np.ndarray], bool] = _nonzero_step
    D1: Optional[PairCovector] = None
    D2: Optional[PairCovector] = None
    step_jacobian: Optional[PairMatrix] = None


def _points(q0, q1) -> tuple[np.ndarray, np.ndarray]:
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    q1 = np.atleast_1d(np.asarray(q1, dtype=float))
    if q0.ndim != 1 or q0.shape != q1.shape:
        raise DimensionMismatch(f"q0 and q1 must be flat vectors of equal length, got {q0.shape} and {q1.shape}")
    return q0, q1


def check_admissible(d: DiscreteDataQQ, h: float, q0, q1) -> tuple[float, np.ndarray, np.ndarray]:
    """Normalize (h, q0, q1) and raise DomainError where d is undefined."""
    q0, q1 = _points(q0, q1)
    h = float(h)
    if not d.admissible(h, q0, q1):
        raise DomainError(f"({h}, {q0.tolist()}, {q1.tolist()}) is not admissible for {d.kind} data")
    return h, q0, q1


def _pair_key(h: float, q0: np.ndarray, q1: np.ndarray) -> tuple:
    return float(h), tuple(q0.tolist()), tuple(q1.tolist())


def _predictor_velocity(sys: SystemFMS, h: float, q0: np.ndarray, q1: np.ndarray, settings: SolverSettings) -> np.ndarray:
    """Velocity at q0 of the quadratic q0 + t v + t^2 a / 2 through q1 at t = h."""
    v_avg = (q1 - q0) / h
    a = el_acceleration(sys, StateTQ(q0, v_avg), settings)
    return v_avg - 0.5 * h * a


def boundary_inverse(
    d: DiscretizationTQ,
    h: float,
    q0,
    q1,
    settings: SolverSettings = DEFAULT_SETTINGS,
    oracle: Optional[FlowOracle] = None,
    v_guess: Optional[np.ndarray] = None,
) -> StateTQ:
    """Find s with boundary_pm(d, h, s) = (q0, q1).

    Linear discretizations are inverted in closed form. Otherwise Newton solves
    the 2n boundary equations from v_guess (default (q1 - q0)/h), retrying once
    from a second-order predictor when a system is known (the oracle argument or the
    discretization's own).

    Raises:
        DomainError: If h = 0
        NewtonNoConvergence: If both attempts fail
    """
    q0, q1 = _points(q0, q1)
    h = float(h)
    if h == 0.0:
        raise DomainError("boundary_inverse needs h != 0")
    a_minus = d.alpha_minus(h)
    v_avg = (q1 - q0) / h
    if d.kind == "linear":
        return StateTQ(q0 - a_minus * v_avg, v_avg)

    n = q0.size
    target = np.concatenate([q0, q1])

    def residual(z: np.ndarray) -> np.ndarray:
        minus, plus = boundary_pm(d, h, StateTQ(z[:n], z[n:]))
        return np.concatenate([minus, plus]) - target

    def jacobian(z: np.ndarray) -> np.ndarray:
        return np.vstack(boundary_jacobian(d, h, StateTQ(z[:n], z[n:]), settings))

    def attempt(v0: np.ndarray) -> StateTQ:
        z0 = np.concatenate([q0 - a_minus * v0, v0])
        result = newton.solve(residual, z0, settings, jacobian=jacobian, label="boundary inverse")
        return StateTQ(result.x[:n], result.x[n:])

    try:
        return attempt(v_avg if v_guess is None else np.atleast_1d(np.asarray(v_guess, dtype=float)))
    except ForcedVIError as first:
        oracle = oracle or d.oracle
        if oracle is None:
            raise
        logger.warning("boundary inverse failed at h=%g (%s); retrying from the acceleration predictor", h, first)
        return attempt(_predictor_velocity(oracle.sys, h, q0, q1, settings))


def boundary_inverse_jacobian(
    d: DiscretizationTQ,
    h: float,
    s: StateTQ,
    settings: SolverSettings = DEFAULT_SETTINGS,
    method: str = "implicit",
) -> np.ndarray:
    """2n x 2n Jacobian of (q0, q1) -> boundary_inverse(d, h, q0, q1) at the image of s.

    ``implicit`` inverts the stacked boundary Jacobians (implicit function
    theorem); ``finite_difference`` differentiates boundary_inverse itself.
    """
    if method == "implicit":
        J = np.vstack(boundary_jacobian(d, h, s, settings))
        try:
            K = scipy.linalg.inv(J)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise SingularJacobian(f"Boundary maps are not invertible at h={h}, {s!r}: {e}")
        if not np.all(np.isfinite(K)):
            raise SingularJacobian(f"Boundary maps are not invertible at h={h}, {s!r}")
        return K
    if method == "finite_difference":
        n = s.n
        return numdiff.jacobian(
            lambda x: boundary_inverse(d, h, x[:n], x[n:], settings).vector(),
            np.concatenate(boundary_pm(d, h, s)),
            settings.fd_step_scale,
        )
    raise ValueError(f"Unknown method '{method}'. Valid methods: {', '.join(INVERSE_METHODS)}")


def to_qq(
    data_tq: DiscreteDataTQ,
    d: DiscretizationTQ,
    settings: SolverSettings = DEFAULT_SETTINGS,
    oracle: Optional[FlowOracle] = None,
) -> DiscreteDataQQ:
    """Transport TQ data to Q x Q through the inverse of the boundary maps.

    L_d = L_cp o (boundary_pm)^-1 and f_d = f_cp o T(boundary_pm)^-1, whose first
    n entries form f_d^- and last n entries f_d^+. D1 and D2 come from the
    gradient of L_cp pulled back the same way.
    """

    @lru_cache(maxsize=1024)
    def transported(key: tuple) -> tuple[float, np.ndarray, np.ndarray]:
        h, q0, q1 = key[0], np.array(key[1]), np.array(key[2])
        s = boundary_inverse(d, h, q0, q1, settings, oracle)
        K = boundary_inverse_jacobian(d, h, s, settings)
        force = np.asarray(data_tq.f_cp(h, s), dtype=float) @ K
        grad = lagrangian_gradient(data_tq, h, s, settings) @ K
        force.setflags(write=False)
        grad.setflags(write=False)
        return float(data_tq.L_cp(h, s)), force, grad

    def lookup(h, q0, q1):
        h, q0, q1 = float(h), *_points(q0, q1)
        if h == 0.0:
            raise DomainError("to_qq data is undefined at h = 0")
        return transported(_pair_key(h, q0, q1)), q0.size

    def half(index: int, second: bool) -> PairCovector:
        def evaluate(h, q0, q1):
            (values, n) = lookup(h, q0, q1)
            vector = values[index]
            return (vector[n:] if second else vector[:n]).copy()

        return evaluate

    return DiscreteDataQQ(
        L_d=lambda h, q0, q1: lookup(h, q0, q1)[0][0],
        f_d_minus=half(1, False),
        f_d_plus=half(1, True),
        declared_order=data_tq.declared_order,
        kind=f"to_qq({data_tq.kind})",
        D1=half(2, False),
        D2=half(2, True),
    )


def _shoot(oracle: FlowOracle, h: float, q0: np.ndarray, q1: np.ndarray, settings: SolverSettings) -> np.ndarray:
    """Initial velocity v with position(flow(h, (q0, v))) = q1."""
    n = q0.size

    def residual(v):
        return flow_jacobian(oracle, h, StateTQ(q0, v))[0].q - q1

    def jacobian(v):
        return flow_jacobian(oracle, h, StateTQ(q0, v))[1][:n, n:]

    try:
        return newton.solve(residual, (q1 - q0) / h, settings, jacobian=jacobian, label="shooting").x
    except ForcedVIError as first:
        logger.warning("shooting failed at h=%g (%s); retrying from the acceleration predictor", h, first)
        guess = _predictor_velocity(oracle.sys, h, q0, q1, settings)
        return newton.solve(residual, guess, settings, jacobian=jacobian, label="shooting").x


def exact_discrete_data_qq(oracle: FlowOracle, settings: Optional[SolverSettings] = None) -> DiscreteDataQQ:
    """Exact discrete data on Q x Q.

    Solves the two-point boundary problem q01(0) = q0, q01(h) = q1 by shooting,
    then integrates L(q01'(t)) and f(q01'(t)) paired with the sensitivities of
    q01(t) to q0 and q1. D1 and D2 follow from the exact forced Legendre
    identities D1 = -FL(q01'(0)) - f_d^- and D2 = FL(q01'(h)) - f_d^+.
    """
    settings = settings or oracle.settings
    sys = oracle.sys

    @lru_cache(maxsize=1024)
    def integrals(key: tuple) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        h, q0, q1 = key[0], np.array(key[1]), np.array(key[2])
        n = q0.size
        v01 = _shoot(oracle, h, q0, q1, settings)
        start = StateTQ(q0, v01)
        end, Phi_h = flow_jacobian(oracle, h, start)
        try:
            lu = scipy.linalg.lu_factor(Phi_h[:n, n:])
        except (np.linalg.LinAlgError, ValueError) as e:
            raise SingularJacobian(f"Shooting sensitivity is singular at h={h}: {e}")
        dv_dq0 = -scipy.linalg.lu_solve(lu, Phi_h[:n, :n])
        dv_dq1 = scipy.linalg.lu_solve(lu, np.eye(n))

        def integrand(ts: np.ndarray) -> np.ndarray:
            rows = []
            for y, Phi in flow_many(oracle, ts, start):
                force = eval_force(sys, y)
                sens_q0 = Phi[:n, :n] + Phi[:n, n:] @ dv_dq0
                sens_q1 = Phi[:n, n:] @ dv_dq1
                rows.append(np.concatenate([[eval_lagrangian(sys, y)], force @ sens_q0, force @ sens_q1]))
            return np.array(rows)

        out = quadrature.gauss_legendre(integrand, 0.0, h, settings.quad_tol, settings.quad_max_depth)
        f_minus, f_plus = out[1 : 1 + n], out[1 + n :]
        D1 = -fiber_derivative(sys, start, settings) - f_minus
        D2 = fiber_derivative(sys, end, settings) - f_plus
        for array in (f_minus, f_plus, D1, D2):
            array.setflags(write=False)
        return float(out[0]), f_minus, f_plus, D1, D2

    def part(index: int):
        def evaluate(h, q0, q1):
            h, q0, q1 = float(h), *_points(q0, q1)
            if h == 0.0:
                raise DomainError("exact Q x Q data is undefined at h = 0")
            value = integrals(_pair_key(h, q0, q1))[index]
            return value if index == 0 else value.copy()

        return evaluate

    return DiscreteDataQQ(
        L_d=part(0),
        f_d_minus=part(1),
        f_d_plus=part(2),
        declared_order=None,
        kind="exact",
        D1=part(3),
        D2=part(4),
    )


def midpoint_data_qq(sys: SystemFMS, settings: SolverSettings = DEFAULT_SETTINGS) -> DiscreteDataQQ:
    """L_d = h L(q_mid, (q1 - q0)/h) with f_d^- = f_d^+ = (h/2) f(q_mid, (q1 - q0)/h)."""

    def midpoint(h, q0, q1) -> StateTQ:
        q0, q1 = _points(q0, q1)
        return StateTQ(0.5 * (q0 + q1), (q1 - q0) / h)

    def half_force(h, q0, q1):
        return 0.5 * h * eval_force(sys, midpoint(h, q0, q1))

    def D(sign: float) -> PairCovector:
        def evaluate(h, q0, q1):
            s = midpoint(h, q0, q1)
            return 0.5 * h * position_gradient(sys, s, settings) + sign * fiber_derivative(sys, s, settings)

        return evaluate

    def step_jacobian(h, q0, q1):
        s = midpoint(h, q0, q1)
        L_vq = mixed_hessian(sys, s)
        f_q, f_v = eval_force_jacobian(sys, s, settings)
        return (
            0.25 * h * (position_hessian(sys, s) + f_q)
            + 0.5 * (L_vq.T - L_vq + f_v)
            - fiber_hessian(sys, s) / h
        )

    return DiscreteDataQQ(
        L_d=lambda h, q0, q1: h * eval_lagrangian(sys, midpoint(h, q0, q1)),
        f_d_minus=half_force,
        f_d_plus=half_force,
        declared_order=2,
        kind="midpoint",
        D1=D(-1.0),
        D2=D(1.0),
        step_jacobian=step_jacobian,
    )


def trapezoid_data_qq(sys: SystemFMS, settings: SolverSettings = DEFAULT_SETTINGS) -> DiscreteDataQQ:
    """L_d = (h/2)[L(q0, v) + L(q1, v)] with v = (q1 - q0)/h, f_d^- = (h/2) f(q0, v), f_d^+ = (h/2) f(q1, v)."""

    def ends(h, q0, q1) -> tuple[StateTQ, StateTQ]:
        q0, q1 = _points(q0, q1)
        v = (q1 - q0) / h
        return StateTQ(q0, v), StateTQ(q1, v)

    def L_d(h, q0, q1):
        left, right = ends(h, q0, q1)
        return 0.5 * h * (eval_lagrangian(sys, left) + eval_lagrangian(sys, right))

    def D1(h, q0, q1):
        left, right = ends(h, q0, q1)
        momentum = 0.5 * (fiber_derivative(sys, left, settings) + fiber_derivative(sys, right, settings))
        return 0.5 * h * position_gradient(sys, left, settings) - momentum

    def D2(h, q0, q1):
        left, right = ends(h, q0, q1)
        momentum = 0.5 * (fiber_derivative(sys, left, settings) + fiber_derivative(sys, right, settings))
        return 0.5 * h * position_gradient(sys, right, settings) + momentum

    def step_jacobian(h, q0, q1):
        left, right = ends(h, q0, q1)
        _, f_v = eval_force_jacobian(sys, left, settings)
        L_vv = fiber_hessian(sys, left) + fiber_hessian(sys, right)
        return 0.5 * (mixed_hessian(sys, left).T - mixed_hessian(sys, right) + f_v - L_vv / h)

    return DiscreteDataQQ(
        L_d=L_d,
        f_d_minus=lambda h, q0, q1: 0.5 * h * eval_force(sys, ends(h, q0, q1)[0]),
        f_d_plus=lambda h, q0, q1: 0.5 * h * eval_force(sys, ends(h, q0, q1)[1]),
        declared_order=2,
        kind="trapezoid",
        D1=D1,
        D2=D2,
        step_jacobian=step_jacobian,
    )


def partial_derivatives(
    d: DiscreteDataQQ, h: float, q0, q1, settings: SolverSettings = DEFAULT_SETTINGS
) -> tuple[np.ndarray, np.ndarray]:
    """(D1 L_d, D2 L_d) at (h, q0, q1), analytic when the data provides them."""
    h, q0, q1 = check_admissible(d, h, q0, q1)
    if d.D1 is not None and d.D2 is not None:
        return np.asarray(d.D1(h, q0, q1), dtype=float), np.asarray(d.D2(h, q0, q1), dtype=float)
    n = q0.size
    grad = numdiff.gradient(lambda x: d.L_d(h, x[:n], x[n:]), np.concatenate([q0, q1]), settings.fd_step_scale)
    return grad[:n], grad[n:]


def discrete_legendre_minus(d: DiscreteDataQQ, h: float, q0, q1, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Forced discrete Legendre transform at q0: -D1 L_d - f_d^-."""
    D1, _ = partial_derivatives(d, h, q0, q1, settings)
    h, q0, q1 = check_admissible(d, h, q0, q1)
    return -D1 - np.asarray(d.f_d_minus(h, q0, q1), dtype=float)


def discrete_legendre_plus(d: DiscreteDataQQ, h: float, q0, q1, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Forced discrete Legendre transform at q1: D2 L_d + f_d^+."""
    _, D2 = partial_derivatives(d, h, q0, q1, settings)
    h, q0, q1 = check_admissible(d, h, q0, q1)
    return D2 + np.asarray(d.f_d_plus(h, q0, q1), dtype=float)
