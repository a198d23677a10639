"""The continuous flow of a forced system, used as ground truth.

Systems registered with a closed-form flow are evaluated exactly (analytic
mode). Every other system is integrated with classical RK4, doubling the
number of fixed steps until two successive estimates agree within ode_tol
(numeric mode). Tangent maps come from the variational equations integrated
alongside the base flow.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from forced_vi import numdiff
from forced_vi.errors import NoConvergence
from forced_vi.fms_core import StateTQ, SystemFMS, el_acceleration
from forced_vi.settings import DEFAULT_SETTINGS, SolverSettings

logger = logging.getLogger(__name__)

MODES = ("analytic", "numeric")

# Coarsest RK4 step tried before halving.
_INITIAL_STEP = 0.25


class TangentTQ(NamedTuple):
    """A tangent vector (dq, dv) to TQ at some state."""

    dq: np.ndarray
    dv: np.ndarray


@dataclass(frozen=True, eq=False)
class FlowOracle:
    """Evaluator of F_t for one system."""

    sys: SystemFMS
    mode: str = "numeric"
    settings: SolverSettings = DEFAULT_SETTINGS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"Unknown flow mode '{self.mode}'. Valid modes: {', '.join(MODES)}")
        if self.mode == "analytic" and not self.sys.has_closed_form_flow:
            raise ValueError(f"System '{self.sys.name}' has no closed-form flow; use numeric mode")

    @classmethod
    def for_system(
        cls, sys: SystemFMS, settings: SolverSettings = DEFAULT_SETTINGS, mode: Optional[str] = None
    ) -> "FlowOracle":
        """Oracle in analytic mode when the system has a closed form, numeric otherwise."""
        if mode is None:
            mode = "analytic" if sys.has_closed_form_flow else "numeric"
        return cls(sys, mode, settings)


def _rk4(rhs: Callable[[np.ndarray], np.ndarray], y0: np.ndarray, t: float, steps: int) -> np.ndarray:
    dt = t / steps
    y = y0.copy()
    for _ in range(steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def _integrate(rhs, y0: np.ndarray, t: float, settings: SolverSettings) -> np.ndarray:
    if t == 0.0:
        return y0.copy()
    steps = max(1, math.ceil(abs(t) / _INITIAL_STEP))
    coarse = _rk4(rhs, y0, t, steps)
    while True:
        steps *= 2
        if steps > settings.ode_max_steps:
            raise NoConvergence(
                f"RK4 estimates over t = {t} still differ after {steps // 2} steps "
                f"(ode_tol = {settings.ode_tol:.1e})"
            )
        fine = _rk4(rhs, y0, t, steps)
        if float(np.max(np.abs(fine - coarse))) <= settings.ode_tol:
            logger.debug("RK4 over t = %g accepted with %d steps", t, steps)
            return fine
        coarse = fine


def _acceleration_jacobian(oracle: FlowOracle, s: StateTQ) -> tuple[np.ndarray, np.ndarray]:
    sys = oracle.sys
    if sys.acceleration_jacobian is not None:
        dq, dv = sys.acceleration_jacobian(s.q, s.v, sys.params)
        return np.atleast_2d(dq), np.atleast_2d(dv)
    n = sys.n
    J = numdiff.jacobian(
        lambda z: el_acceleration(sys, StateTQ(z[:n], z[n:]), oracle.settings),
        s.vector(),
        oracle.settings.fd_step_scale,
    )
    return J[:, :n], J[:, n:]


def _numeric(oracle: FlowOracle, t: float, s: StateTQ, Y0: Optional[np.ndarray]):
    sys, settings = oracle.sys, oracle.settings
    n = sys.n

    if Y0 is None:
        def rhs(y):
            state = StateTQ(y[:n], y[n:])
            return np.concatenate([state.v, el_acceleration(sys, state, settings)])

        y = _integrate(rhs, s.vector(), t, settings)
        return StateTQ(y[:n], y[n:]), None

    cols = Y0.shape[1]

    def augmented(y):
        state = StateTQ(y[:n], y[n : 2 * n])
        Y = y[2 * n :].reshape(2 * n, cols)
        a_q, a_v = _acceleration_jacobian(oracle, state)
        dY = np.vstack([Y[n:], a_q @ Y[:n] + a_v @ Y[n:]])
        return np.concatenate([state.v, el_acceleration(sys, state, settings), dY.ravel()])

    y = _integrate(augmented, np.concatenate([s.vector(), Y0.ravel()]), t, settings)
    return StateTQ(y[:n], y[n : 2 * n]), y[2 * n :].reshape(2 * n, cols)


def _analytic(oracle: FlowOracle, t: float, s: StateTQ) -> StateTQ:
    sys = oracle.sys
    q, v = sys.closed_form_flow(t, s.q, s.v, sys.params)
    return StateTQ(q, v)


def flow(oracle: FlowOracle, t: float, s: StateTQ) -> StateTQ:
    """F_t(s).

    Raises:
        NoConvergence: If the RK4 step cap is hit
        SingularMassMatrix: If the system loses regularity along the path
    """
    if oracle.mode == "analytic":
        return _analytic(oracle, float(t), s)
    return _numeric(oracle, float(t), s, None)[0]


def flow_jacobian(oracle: FlowOracle, t: float, s: StateTQ) -> tuple[StateTQ, np.ndarray]:
    """F_t(s) together with the 2n x 2n matrix of T_s F_t in (q, v) coordinates."""
    t = float(t)
    if oracle.mode == "analytic":
        sys = oracle.sys
        return _analytic(oracle, t, s), np.atleast_2d(sys.closed_form_tangent(t, s.q, s.v, sys.params))
    return _numeric(oracle, t, s, np.eye(2 * s.n))


def tangent_flow(
    oracle: FlowOracle, t: float, s: StateTQ, ds: Union[TangentTQ, Sequence[np.ndarray]]
) -> TangentTQ:
    """T_s F_t applied to the tangent vector ds = (dq, dv)."""
    dq, dv = (np.atleast_1d(np.asarray(x, dtype=float)) for x in ds)
    delta = np.concatenate([dq, dv])
    n = s.n
    if oracle.mode == "analytic":
        _, Phi = flow_jacobian(oracle, t, s)
        out = Phi @ delta
    else:
        _, Y = _numeric(oracle, float(t), s, delta[:, None])
        out = Y[:, 0]
    return TangentTQ(out[:n], out[n:])


def flow_many(oracle: FlowOracle, times: Sequence[float], s: StateTQ) -> list[tuple[StateTQ, np.ndarray]]:
    """Flow and tangent map at several times, in the order given.

    In numeric mode the times are visited outward from 0 and each one is
    reached from its neighbour, so a batch costs about one integration over
    the widest time.
    """
    times = [float(t) for t in times]
    if oracle.mode == "analytic":
        return [flow_jacobian(oracle, t, s) for t in times]

    results: list = [None] * len(times)
    eye = np.eye(2 * s.n)
    forward = sorted((i for i, t in enumerate(times) if t >= 0.0), key=lambda i: times[i])
    backward = sorted((i for i, t in enumerate(times) if t < 0.0), key=lambda i: -times[i])
    for order in (forward, backward):
        state, Phi, t_prev = s, eye, 0.0
        for i in order:
            state, Phi = _numeric(oracle, times[i] - t_prev, state, Phi)
            t_prev = times[i]
            results[i] = (state, Phi)
    return results


def sample_trajectory(oracle: FlowOracle, s0: StateTQ, h: float, N: int) -> list[StateTQ]:
    """States at t = 0, h, ..., N h, built by composing single-h flows."""
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    samples = [s0]
    for _ in range(N):
        samples.append(flow(oracle, h, samples[-1]))
    return samples
