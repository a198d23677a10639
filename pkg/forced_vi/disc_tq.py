"""Discretizations of TQ and of forced systems on TQ.

A discretization (psi, alpha+, alpha-) assigns to every step h and state v a
short curve t -> psi(h, t, v) through v; its endpoints at t = alpha-(h) and
t = alpha+(h) are the boundary maps. Discrete data on TQ is a discrete
Lagrangian L_cp(h, v) together with a discrete force f_cp(h, v), a covector
of length 2n acting on (dq, dv).
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from forced_vi import numdiff, quadrature
from forced_vi.continuous_flow import FlowOracle, flow, flow_jacobian, flow_many
from forced_vi.errors import DimensionMismatch, DomainError
from forced_vi.fms_core import (
    StateTQ,
    SystemFMS,
    eval_force,
    eval_lagrangian,
    fiber_derivative,
    horizontal_force,
    position_gradient,
)
from forced_vi.settings import DEFAULT_SETTINGS, SolverSettings

AlphaMap = Callable[[float], float]
PsiMap = Callable[[float, float, StateTQ], np.ndarray]

ALPHA_CHOICES = ("one_sided", "symmetric")

# Thresholds used by verify_discretization_axioms and check_consistency_order1.
ALPHA_TOL = 1e-12
ORIGIN_TOL = 1e-12
VELOCITY_TOL = 1e-6
CONSISTENCY_TOL = 1e-6
CONSISTENCY_STEP = 1e-4


def _one_sided_plus(h: float) -> float:
    return h


def _one_sided_minus(h: float) -> float:
    return 0.0


def _symmetric_plus(h: float) -> float:
    return 0.5 * h


def _symmetric_minus(h: float) -> float:
    return -0.5 * h


def alpha_pair(choice: str = "one_sided") -> tuple[AlphaMap, AlphaMap]:
    """(alpha+, alpha-) for alpha- = 0, alpha+ = h or for the symmetric pair +-h/2."""
    if choice == "one_sided":
        return _one_sided_plus, _one_sided_minus
    if choice == "symmetric":
        return _symmetric_plus, _symmetric_minus
    raise ValueError(f"Unknown alpha pair '{choice}'. Valid choices: {', '.join(ALPHA_CHOICES)}")


@dataclass(frozen=True, eq=False)
class DiscretizationTQ:
    """A discretization (psi, alpha+, alpha-) of TQ.

    Optional closed forms: psi_dt is d psi / dt, psi_jacobian the n x 2n
    derivative of psi with respect to (q, v), and psi_dt_jacobian the same
    derivative of d psi / dt. Missing ones are replaced by finite differences.
    """

    alpha_plus: AlphaMap
    alpha_minus: AlphaMap
    psi: PsiMap
    kind: str = "custom"
    order: Optional[int] = None
    psi_dt: Optional[PsiMap] = None
    psi_jacobian: Optional[Callable[[float, float, StateTQ], np.ndarray]] = None
    psi_dt_jacobian: Optional[Callable[[float, float, StateTQ], np.ndarray]] = None
    domain: float = math.inf
    oracle: Optional[FlowOracle] = None

    @property
    def provenance(self) -> str:
        return f"{self.kind}({self.order})" if self.kind == "truncated_exact" else self.kind


@dataclass(frozen=True, eq=False)
class DiscreteDataTQ:
    """Discrete Lagrangian and force on TQ.

    dL_cp, when present, is the exact gradient of L_cp with respect to (q, v).
    """

    L_cp: Callable[[float, StateTQ], float]
    f_cp: Callable[[float, StateTQ], np.ndarray]
    declared_order: Optional[int] = None
    kind: str = "custom"
    dL_cp: Optional[Callable[[float, StateTQ], np.ndarray]] = None


class AxiomReport(NamedTuple):
    max_alpha_gap: float
    max_sign_violation: float
    max_origin_gap: float
    max_velocity_gap: float
    ok: bool


class ConsistencyReport(NamedTuple):
    max_value_at_zero: float
    max_lagrangian_gap: float
    max_force_gap: float
    ok: bool


def _check_h(d: DiscretizationTQ, h: float) -> float:
    h = float(h)
    if not abs(h) < d.domain:
        raise DomainError(f"Step h = {h} is outside the {d.provenance} discretization domain |h| < {d.domain}")
    return h


def boundary_minus(d: DiscretizationTQ, h: float, s: StateTQ) -> np.ndarray:
    """The left boundary map psi(h, alpha-(h), s)."""
    h = _check_h(d, h)
    return np.asarray(d.psi(h, d.alpha_minus(h), s), dtype=float)


def boundary_plus(d: DiscretizationTQ, h: float, s: StateTQ) -> np.ndarray:
    """The right boundary map psi(h, alpha+(h), s)."""
    h = _check_h(d, h)
    return np.asarray(d.psi(h, d.alpha_plus(h), s), dtype=float)


def boundary_pm(d: DiscretizationTQ, h: float, s: StateTQ) -> tuple[np.ndarray, np.ndarray]:
    """The pair (left boundary, right boundary)."""
    return boundary_minus(d, h, s), boundary_plus(d, h, s)


def psi_velocity(d: DiscretizationTQ, h: float, t: float, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """d psi / dt at (h, t, s)."""
    if d.psi_dt is not None:
        return np.asarray(d.psi_dt(h, t, s), dtype=float)
    return numdiff.derivative(lambda tau: d.psi(h, tau, s), t, settings.fd_step_scale)


def psi_jacobian(d: DiscretizationTQ, h: float, t: float, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """n x 2n derivative of psi(h, t, .) with respect to (q, v)."""
    if d.psi_jacobian is not None:
        return np.atleast_2d(np.asarray(d.psi_jacobian(h, t, s), dtype=float))
    return numdiff.jacobian(lambda z: d.psi(h, t, StateTQ.from_vector(z)), s.vector(), settings.fd_step_scale)


def psi_velocity_jacobian(d: DiscretizationTQ, h: float, t: float, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """n x 2n derivative of d psi / dt with respect to (q, v)."""
    if d.psi_dt_jacobian is not None:
        return np.atleast_2d(np.asarray(d.psi_dt_jacobian(h, t, s), dtype=float))
    return numdiff.jacobian(
        lambda z: psi_velocity(d, h, t, StateTQ.from_vector(z), settings), s.vector(), settings.fd_step_scale
    )


def boundary_jacobian(
    d: DiscretizationTQ, h: float, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians (n x 2n) of the left and right boundary maps at s."""
    h = _check_h(d, h)
    return (
        psi_jacobian(d, h, d.alpha_minus(h), s, settings),
        psi_jacobian(d, h, d.alpha_plus(h), s, settings),
    )


def make_linear_discretization(n: int, alpha: str = "one_sided") -> DiscretizationTQ:
    """psi(h, t, (q, v)) = q + t v."""
    plus, minus = alpha_pair(alpha)
    eye = np.eye(n)
    zeros = np.zeros((n, n))

    def _check(s: StateTQ) -> None:
        if s.n != n:
            raise DimensionMismatch(f"Linear discretization of dimension {n} applied to a state of dimension {s.n}")

    def psi(h, t, s):
        _check(s)
        return s.q + t * s.v

    return DiscretizationTQ(
        alpha_plus=plus,
        alpha_minus=minus,
        psi=psi,
        kind="linear",
        psi_dt=lambda h, t, s: s.v.copy(),
        psi_jacobian=lambda h, t, s: np.hstack([eye, t * eye]),
        psi_dt_jacobian=lambda h, t, s: np.hstack([zeros, eye]),
    )


def _check_alpha_pair(plus: AlphaMap, minus: AlphaMap) -> None:
    for k in range(11):
        for h in (0.4 * 2.0**-k, -0.4 * 2.0**-k):
            a_plus, a_minus = plus(h), minus(h)
            if abs(a_plus - a_minus - h) > ALPHA_TOL * max(1.0, abs(h)) or h * a_plus < 0 or h * a_minus > 0:
                raise ValueError(f"alpha pair violates the discretization axioms at h = {h}")


def make_exact_discretization(
    oracle: FlowOracle, alpha_plus: Optional[AlphaMap] = None, alpha_minus: Optional[AlphaMap] = None
) -> DiscretizationTQ:
    """psi(h, t, s) = position of F_t(s), independent of h."""
    if alpha_plus is None or alpha_minus is None:
        alpha_plus, alpha_minus = alpha_pair("one_sided")
    _check_alpha_pair(alpha_plus, alpha_minus)
    n = oracle.sys.n

    return DiscretizationTQ(
        alpha_plus=alpha_plus,
        alpha_minus=alpha_minus,
        psi=lambda h, t, s: flow(oracle, t, s).q,
        kind="exact",
        psi_dt=lambda h, t, s: flow(oracle, t, s).v,
        psi_jacobian=lambda h, t, s: flow_jacobian(oracle, t, s)[1][:n],
        psi_dt_jacobian=lambda h, t, s: flow_jacobian(oracle, t, s)[1][n:],
        oracle=oracle,
    )


def _state_key(s: StateTQ) -> tuple:
    return tuple(s.vector().tolist())


def exact_discrete_data_tq(
    oracle: FlowOracle,
    alpha_plus: Optional[AlphaMap] = None,
    alpha_minus: Optional[AlphaMap] = None,
    settings: Optional[SolverSettings] = None,
) -> DiscreteDataTQ:
    """Exact discrete data: integrals of L and f along the flow.

    L_cp(h, v) is the integral of L(F_t v) over [alpha-(h), alpha+(h)] and
    f_cp(h, v)(dv) the integral of f(F_t v) applied to the position part of
    T F_t (dv). The gradient of L_cp is integrated in the same pass.
    """
    if alpha_plus is None or alpha_minus is None:
        alpha_plus, alpha_minus = alpha_pair("one_sided")
    _check_alpha_pair(alpha_plus, alpha_minus)
    settings = settings or oracle.settings
    sys = oracle.sys
    n = sys.n

    @lru_cache(maxsize=1024)
    def integrals(h: float, key: tuple) -> np.ndarray:
        s = StateTQ.from_vector(np.array(key))

        def integrand(ts: np.ndarray) -> np.ndarray:
            rows = []
            for y, Phi in flow_many(oracle, ts, s):
                Phi_q, Phi_v = Phi[:n], Phi[n:]
                grad = position_gradient(sys, y, settings) @ Phi_q + fiber_derivative(sys, y, settings) @ Phi_v
                rows.append(np.concatenate([[eval_lagrangian(sys, y)], grad, eval_force(sys, y) @ Phi_q]))
            return np.array(rows)

        out = quadrature.gauss_legendre(
            integrand, alpha_minus(h), alpha_plus(h), settings.quad_tol, settings.quad_max_depth
        )
        out.setflags(write=False)
        return out

    def lookup(h: float, s: StateTQ) -> np.ndarray:
        return integrals(float(h), _state_key(s))

    return DiscreteDataTQ(
        L_cp=lambda h, s: float(lookup(h, s)[0]),
        f_cp=lambda h, s: lookup(h, s)[1 + 2 * n :].copy(),
        declared_order=None,
        kind="exact",
        dL_cp=lambda h, s: lookup(h, s)[1 : 1 + 2 * n].copy(),
    )


def _taylor_one_minus_exp(x: float, r: int) -> float:
    """S_r(x) = -(x + x^2/2! + ... + x^r/r!), the order-r Taylor polynomial of 1 - e^x."""
    return -sum(x**j / math.factorial(j) for j in range(1, r + 1))


def _taylor_one_minus_exp_prime(x: float, r: int) -> float:
    return -sum(x ** (j - 1) / math.factorial(j - 1) for j in range(1, r + 1))


def truncated_exact_friction(alpha: float, r: int) -> tuple[DiscretizationTQ, DiscreteDataTQ]:
    """Order-r discretization of the damped particle.

    Every occurrence of 1 - exp(x) in the exact discretization and exact data
    of the damped particle is replaced by its order-r Taylor polynomial S_r.
    The discrete Lagrangian is v^2 S_r(-2 alpha h) / (4 alpha).
    """
    if r < 1:
        raise ValueError(f"Order r must be at least 1, got {r}")
    if not alpha > 0:
        raise ValueError(f"Damping alpha must be positive, got {alpha}")
    plus, minus = alpha_pair("one_sided")

    def S(x: float) -> float:
        return _taylor_one_minus_exp(x, r)

    def dS(x: float) -> float:
        return _taylor_one_minus_exp_prime(x, r)

    def blocks(s: StateTQ, position_col: float) -> np.ndarray:
        eye = np.eye(s.n)
        return np.hstack([eye, position_col * eye])

    discretization = DiscretizationTQ(
        alpha_plus=plus,
        alpha_minus=minus,
        psi=lambda h, t, s: s.q + (s.v / alpha) * S(-alpha * t),
        kind="truncated_exact",
        order=r,
        psi_dt=lambda h, t, s: -s.v * dS(-alpha * t),
        psi_jacobian=lambda h, t, s: blocks(s, S(-alpha * t) / alpha),
        psi_dt_jacobian=lambda h, t, s: np.hstack([np.zeros((s.n, s.n)), -dS(-alpha * t) * np.eye(s.n)]),
    )

    def f_cp(h: float, s: StateTQ) -> np.ndarray:
        s1, s2 = S(-alpha * h), S(-2.0 * alpha * h)
        return -np.concatenate([s.v * s1, (s.v / alpha) * (s1 - 0.5 * s2)])

    data = DiscreteDataTQ(
        L_cp=lambda h, s: float(s.v @ s.v) / (4.0 * alpha) * S(-2.0 * alpha * h),
        f_cp=f_cp,
        declared_order=r,
        kind="truncated_exact",
        dL_cp=lambda h, s: np.concatenate([np.zeros(s.n), s.v / (2.0 * alpha) * S(-2.0 * alpha * h)]),
    )
    return discretization, data


def quadrature_discrete_data(
    sys: SystemFMS,
    d: DiscretizationTQ,
    rule: str = "midpoint",
    points: int = 2,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> DiscreteDataTQ:
    """Discrete data from a fixed quadrature rule along the discretization curve.

    L_cp(h, v) = sum_i w_i L(psi(h, t_i, v), d psi/dt(h, t_i, v)) over nodes t_i in
    [alpha-(h), alpha+(h)], and f_cp pairs f at the same points with the
    Jacobian of psi with respect to (q, v).

    Args:
        sys: The continuous system
        d: Discretization providing the curves
        rule: rectangle, trapezoid, midpoint or gauss
        points: Number of Gauss–Legendre points for the gauss rule
        settings: Finite-difference settings for missing psi derivatives
    """
    nodes, weights = quadrature.fixed_rule(rule, points)
    order = {"rectangle": 1, "trapezoid": 2, "midpoint": 2, "gauss": 2 * points}[rule]
    n = sys.n

    @lru_cache(maxsize=1024)
    def terms(h: float, key: tuple) -> np.ndarray:
        s = StateTQ.from_vector(np.array(key))
        a_minus = d.alpha_minus(h)
        total = np.zeros(1 + 4 * n)
        for tau, w in zip(nodes, weights):
            t = a_minus + tau * h
            point = StateTQ(d.psi(h, t, s), psi_velocity(d, h, t, s, settings))
            J_pos = psi_jacobian(d, h, t, s, settings)
            J_vel = psi_velocity_jacobian(d, h, t, s, settings)
            grad = position_gradient(sys, point, settings) @ J_pos + fiber_derivative(sys, point, settings) @ J_vel
            total += w * h * np.concatenate([[eval_lagrangian(sys, point)], grad, eval_force(sys, point) @ J_pos])
        total.setflags(write=False)
        return total

    def lookup(h: float, s: StateTQ) -> np.ndarray:
        return terms(float(h), _state_key(s))

    return DiscreteDataTQ(
        L_cp=lambda h, s: float(lookup(h, s)[0]),
        f_cp=lambda h, s: lookup(h, s)[1 + 2 * n :].copy(),
        declared_order=order,
        kind=f"quadrature:{rule}" if rule != "gauss" else f"quadrature:gauss{points}",
        dL_cp=lambda h, s: lookup(h, s)[1 : 1 + 2 * n].copy(),
    )


def lagrangian_gradient(data: DiscreteDataTQ, h: float, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """dL_cp at (h, s) with respect to (q, v)."""
    if data.dL_cp is not None:
        return np.asarray(data.dL_cp(h, s), dtype=float)
    return numdiff.gradient(lambda z: data.L_cp(h, StateTQ.from_vector(z)), s.vector(), settings.fd_step_scale)


def discrete_form(data: DiscreteDataTQ, h: float, s: StateTQ, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """The 1-form dL_cp + f_cp at (h, s), as a length-2n covector."""
    return lagrangian_gradient(data, h, s, settings) + np.asarray(data.f_cp(h, s), dtype=float)


def default_axiom_steps() -> list[float]:
    """h in {+-0.4 * 2^-k, k = 0..10}."""
    return [sign * 0.4 * 2.0**-k for k in range(11) for sign in (1.0, -1.0)]


def verify_discretization_axioms(
    d: DiscretizationTQ,
    states: Sequence[StateTQ],
    h_values: Optional[Sequence[float]] = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> AxiomReport:
    """Check the discretization axioms on a grid of (h, s) samples.

    The checks are alpha+(h) - alpha-(h) = h, h alpha+(h) >= 0 >= h alpha-(h),
    psi(h, 0, v_q) = q and d psi / dt (h, 0, v_q) = v, the last one by a central
    difference in t so that it is independent of any closed form.
    """
    if not states:
        raise ValueError("verify_discretization_axioms needs at least one state")
    h_values = default_axiom_steps() if h_values is None else list(h_values)
    alpha_gap = sign_violation = origin_gap = velocity_gap = 0.0
    for h in h_values:
        a_plus, a_minus = d.alpha_plus(h), d.alpha_minus(h)
        alpha_gap = max(alpha_gap, abs(a_plus - a_minus - h) / max(1.0, abs(h)))
        sign_violation = max(sign_violation, -h * a_plus, h * a_minus)
        for s in states:
            origin_gap = max(origin_gap, float(np.max(np.abs(np.asarray(d.psi(h, 0.0, s)) - s.q))))
            dt = numdiff.derivative(lambda t: d.psi(h, t, s), 0.0, settings.fd_step_scale)
            velocity_gap = max(velocity_gap, float(np.max(np.abs(dt - s.v))) / (1.0 + float(np.max(np.abs(s.v)))))
    ok = alpha_gap <= ALPHA_TOL and sign_violation <= 0.0 and origin_gap <= ORIGIN_TOL and velocity_gap <= VELOCITY_TOL
    return AxiomReport(alpha_gap, sign_violation, origin_gap, velocity_gap, ok)


def check_consistency_order1(
    sys: SystemFMS,
    data: DiscreteDataTQ,
    states: Sequence[StateTQ],
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> ConsistencyReport:
    """Check L_cp = h L + O(h^2) and f_cp = h f + O(h^2) at the sampled states.

    Values at h = 0 must vanish and the central difference in h at 0 must match
    L and the horizontal force within CONSISTENCY_TOL (relative, floored at 1).
    """
    if not states:
        raise ValueError("check_consistency_order1 needs at least one state")
    at_zero = lagrangian_gap = force_gap = 0.0
    for s in states:
        at_zero = max(at_zero, abs(data.L_cp(0.0, s)), float(np.max(np.abs(data.f_cp(0.0, s)))))
        L = eval_lagrangian(sys, s)
        dL = float(numdiff.derivative(lambda h: data.L_cp(h, s), 0.0, CONSISTENCY_STEP))
        lagrangian_gap = max(lagrangian_gap, abs(dL - L) / (1.0 + abs(L)))
        f = horizontal_force(sys, s)
        df = numdiff.derivative(lambda h: data.f_cp(h, s), 0.0, CONSISTENCY_STEP)
        force_gap = max(force_gap, float(np.max(np.abs(df - f))) / (1.0 + float(np.max(np.abs(f)))))
    ok = at_zero <= CONSISTENCY_TOL and lagrangian_gap <= CONSISTENCY_TOL and force_gap <= CONSISTENCY_TOL
    return ConsistencyReport(at_zero, lagrangian_gap, force_gap, ok)
