"""Convergence-order, exactness and correspondence experiments.

Reports are pydantic models so the CLI can dump them as JSON unchanged.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from forced_vi.continuous_flow import FlowOracle, flow, sample_trajectory
from forced_vi.disc_qq import DiscreteDataQQ, boundary_inverse, exact_discrete_data_qq, to_qq
from forced_vi.disc_tq import DiscreteDataTQ, DiscretizationTQ, boundary_pm, make_exact_discretization
from forced_vi.fms_core import StateTQ
from forced_vi.settings import DEFAULT_SETTINGS, SolverSettings
from forced_vi.stepper import del_residual, run_trajectory, run_trajectory_tq, step_qq, step_tq

logger = logging.getLogger(__name__)

ERROR_CEILING = 1e-1
MIN_FIT_POINTS = 3
SLOPE_BELOW = 0.25
SLOPE_ABOVE = 0.75
GLOBAL_SLOPE_ABOVE = 0.5
POSITION_GAP_TOL = 1e-8
CORRESPONDENCE_TOL = 1e-8
NORMS = ("tq", "position")


def default_h_grid() -> list[float]:
    """h_k = 0.2 * 2^-k, k = 0..6."""
    return [0.2 * 2.0**-k for k in range(7)]


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"
    EXACT = "exact"

    @property
    def passed(self) -> bool:
        return self in (Verdict.PASS, Verdict.EXACT)


class TQScheme(NamedTuple):
    """A TQ integrator: discrete data together with its discretization."""

    data: DiscreteDataTQ
    discretization: DiscretizationTQ


Scheme = Union[TQScheme, DiscreteDataQQ]


class OrderFitReport(BaseModel):
    """Least-squares fit of log(error) against log(h)."""

    model_config = ConfigDict(frozen=True)

    h_values: list[float]
    errors: list[float]
    used_mask: list[bool]
    slope: Optional[float] = None
    intercept: Optional[float] = None
    r_squared: Optional[float] = None
    expected_slope: Optional[float] = None
    verdict: Optional[Verdict] = None
    kind: str = "one_step"


class ExactnessReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    h: float
    N: int
    residuals: list[float]
    position_gaps: list[float]
    max_residual: float
    max_position_gap: float
    residual_threshold: float
    position_threshold: float
    ok: bool


class CorrespondenceReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    h_values: list[float]
    discrepancies: list[float]
    max_discrepancy: float
    threshold: float
    ok: bool


def _max_abs(x: np.ndarray) -> float:
    return float(np.max(np.abs(x)))


def estimate_order(
    h_values: Sequence[float],
    errors: Sequence[float],
    expected_slope: Optional[float] = None,
    floor: float = 100 * DEFAULT_SETTINGS.newton_tol,
    ceiling: float = ERROR_CEILING,
    below: float = SLOPE_BELOW,
    above: float = SLOPE_ABOVE,
) -> OrderFitReport:
    """Fit the convergence slope of errors against a strictly decreasing h grid.

    Only errors in [floor, ceiling] enter the fit. With fewer than three such
    points the verdict is inconclusive; otherwise, when an expected slope is
    given, the verdict is pass iff the slope lies in
    [expected - below, expected + above].
    """
    h = np.asarray(h_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.ndim != 1 or h.shape != e.shape:
        raise ValueError(f"h_values and errors must be aligned, got {h.shape} and {e.shape}")
    if np.any(h <= 0) or np.any(np.diff(h) >= 0):
        raise ValueError("h_values must be positive and strictly decreasing")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and nonnegative")

    used = (e >= floor) & (e <= ceiling)
    report = dict(h_values=h.tolist(), errors=e.tolist(), used_mask=used.tolist(), expected_slope=expected_slope)
    if int(used.sum()) < MIN_FIT_POINTS:
        return OrderFitReport(**report, verdict=Verdict.INCONCLUSIVE)

    x, y = np.log(h[used]), np.log(e[used])
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - float(np.sum(residual**2)) / total if total > 0 else 1.0
    verdict = None
    if expected_slope is not None:
        verdict = Verdict.PASS if expected_slope - below <= slope <= expected_slope + above else Verdict.FAIL
    return OrderFitReport(
        **report, slope=float(slope), intercept=float(intercept), r_squared=r_squared, verdict=verdict
    )


def _qq_start(oracle: FlowOracle, h: float, s: StateTQ) -> tuple[np.ndarray, np.ndarray]:
    exact = make_exact_discretization(oracle)
    return boundary_pm(exact, h, s)


def _recover_state(oracle: FlowOracle, h: float, q0: np.ndarray, q1: np.ndarray, settings: SolverSettings) -> StateTQ:
    """The state at q0 of the exact curve reaching q1 after h."""
    return boundary_inverse(make_exact_discretization(oracle), h, q0, q1, settings, oracle)


def flow_error(
    scheme: Scheme,
    oracle: FlowOracle,
    h: float,
    s: StateTQ,
    settings: SolverSettings = DEFAULT_SETTINGS,
    norm: str = "tq",
) -> float:
    """One-step error of a scheme against the flow, in the max norm.

    A TQ scheme is compared as step_tq(h, s) against flow(h, s). A Q x Q scheme
    starts from the exact pair (q0, q1) at s and takes one step to q2; the
    ``tq`` norm recovers the state at q1 from (q1, q2) with the exact
    discretization and compares it with flow(h, s), while ``position``
    compares q2 with the position of flow(2h, s). ``tq`` is the default so that
    both formulations report the same quantity; the plain position error at 2h
    has the same r + 1 slope.
    """
    if norm not in NORMS:
        raise ValueError(f"Unknown norm '{norm}'. Valid norms: {', '.join(NORMS)}")
    target = flow(oracle, h, s)
    if isinstance(scheme, TQScheme):
        result = step_tq(scheme.data, scheme.discretization, h, s, settings, oracle.sys)
        if norm == "position":
            return _max_abs(result.q - target.q)
        return _max_abs(result.vector() - target.vector())

    q0, q1 = _qq_start(oracle, h, s)
    q2 = step_qq(scheme, h, q0, q1, settings, oracle.sys)
    if norm == "position":
        return _max_abs(q2 - flow(oracle, h, target).q)
    return _max_abs(_recover_state(oracle, h, q1, q2, settings).vector() - target.vector())


def _evaluate_grid(fn, h_grid: Sequence[float], max_workers: int) -> list[float]:
    if max_workers <= 1:
        return [fn(h) for h in h_grid]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, h_grid))


def _sorted_grid(h_grid: Optional[Sequence[float]]) -> list[float]:
    grid = default_h_grid() if h_grid is None else [float(h) for h in h_grid]
    return sorted(grid, reverse=True)


def order_of_flow_experiment(
    scheme: Scheme,
    oracle: FlowOracle,
    r_expected: Optional[int],
    s0: StateTQ,
    h_grid: Optional[Sequence[float]] = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
    norm: str = "tq",
    max_workers: int = 1,
) -> OrderFitReport:
    """Fit the one-step error slope; order r should give slope r + 1.

    When every error is under 100 times the solver noise floor the scheme
    is reported as exact instead of fitted. Without r (data that declares
    no order) only the exact verdict is a pass.
    """
    grid = _sorted_grid(h_grid)
    errors = _evaluate_grid(lambda h: flow_error(scheme, oracle, h, s0, settings, norm), grid, max_workers)
    logger.debug("one-step errors: %s", dict(zip(grid, errors)))
    expected = None if r_expected is None else r_expected + 1
    report = estimate_order(grid, errors, expected_slope=expected, floor=100 * settings.newton_tol)
    if max(errors) <= 100 * settings.noise_floor:
        return report.model_copy(update={"verdict": Verdict.EXACT})
    return report


def _global_error(scheme: Scheme, oracle: FlowOracle, h: float, s0: StateTQ, steps: int, settings: SolverSettings, norm: str) -> float:
    target = flow(oracle, steps * h, s0)
    if isinstance(scheme, TQScheme):
        trajectory = run_trajectory_tq(scheme.data, scheme.discretization, h, s0, steps, settings, oracle.sys)
        final = StateTQ(trajectory.positions[-1], trajectory.velocities[-1])
        if norm == "position":
            return _max_abs(final.q - target.q)
        return _max_abs(final.vector() - target.vector())

    q0, q1 = _qq_start(oracle, h, s0)
    positions = run_trajectory(scheme, h, q0, q1, steps + 1, settings, oracle.sys).positions
    if norm == "position":
        return _max_abs(positions[steps] - target.q)
    recovered = _recover_state(oracle, h, positions[steps], positions[steps + 1], settings)
    return _max_abs(recovered.vector() - target.vector())


def global_error_experiment(
    scheme: Scheme,
    oracle: FlowOracle,
    r_expected: Optional[int],
    s0: StateTQ,
    h_grid: Optional[Sequence[float]] = None,
    horizon: float = 1.0,
    settings: SolverSettings = DEFAULT_SETTINGS,
    norm: str = "tq",
    max_workers: int = 1,
) -> OrderFitReport:
    """Secondary diagnostic: error at a fixed horizon, expected slope r.

    Every h must divide the horizon into a whole number of steps.
    """
    grid = _sorted_grid(h_grid)
    steps = {}
    for h in grid:
        count = round(horizon / h)
        if count < 1 or not math.isclose(count * h, horizon, rel_tol=1e-9):
            raise ValueError(f"h = {h} does not divide the horizon {horizon}")
        steps[h] = count
    errors = _evaluate_grid(
        lambda h: _global_error(scheme, oracle, h, s0, steps[h], settings, norm), grid, max_workers
    )
    report = estimate_order(
        grid, errors, expected_slope=r_expected, floor=100 * settings.newton_tol, above=GLOBAL_SLOPE_ABOVE
    )
    return report.model_copy(update={"kind": "global"})


def exactness_check(
    oracle: FlowOracle,
    h: float,
    s0: StateTQ,
    N: int,
    settings: Optional[SolverSettings] = None,
    data: Optional[DiscreteDataQQ] = None,
    position_threshold: float = POSITION_GAP_TOL,
) -> ExactnessReport:
    """Check that flow samples are a trajectory of the exact Q x Q data.

    The sampled positions q_k = position of flow(k h, s0) must have DEL
    residuals under 100 times the solver noise floor, and run_trajectory from
    (q_0, q_1) must reproduce every sample within position_threshold. Passing
    other data (for example midpoint data) turns this into a negative control.
    """
    settings = settings or oracle.settings
    data = data or exact_discrete_data_qq(oracle, settings)
    if N < 2:
        raise ValueError(f"N must be at least 2, got {N}")
    samples = [state.q for state in sample_trajectory(oracle, s0, h, N)]
    residuals = [
        _max_abs(del_residual(data, h, samples[k - 1], samples[k], samples[k + 1], settings)) for k in range(1, N)
    ]
    trajectory = run_trajectory(data, h, samples[0], samples[1], N, settings, oracle.sys)
    gaps = [_max_abs(q - sample) for q, sample in zip(trajectory.positions, samples)]
    residual_threshold = 100 * settings.noise_floor
    max_residual, max_gap = max(residuals), max(gaps)
    return ExactnessReport(
        h=h,
        N=N,
        residuals=residuals,
        position_gaps=gaps,
        max_residual=max_residual,
        max_position_gap=max_gap,
        residual_threshold=residual_threshold,
        position_threshold=position_threshold,
        ok=max_residual <= residual_threshold and max_gap <= position_threshold,
    )


def correspondence_check(
    scheme: TQScheme,
    h_grid: Sequence[float],
    s0: StateTQ,
    settings: SolverSettings = DEFAULT_SETTINGS,
    data_qq: Optional[DiscreteDataQQ] = None,
    oracle: Optional[FlowOracle] = None,
    threshold: float = CORRESPONDENCE_TOL,
) -> CorrespondenceReport:
    """Compare step_tq, pushed through the boundary maps, with step_qq on Q x Q data.

    The Q x Q data defaults to to_qq of the scheme; any other data can be
    passed as a mismatched control.
    """
    data, d = scheme
    data_qq = data_qq or to_qq(data, d, settings, oracle)
    sys = oracle.sys if oracle is not None else None
    grid = _sorted_grid(h_grid)
    discrepancies = []
    for h in grid:
        q0, q1 = boundary_pm(d, h, s0)
        q2 = step_qq(data_qq, h, q0, q1, settings, sys)
        q1_tq, q2_tq = boundary_pm(d, h, step_tq(data, d, h, s0, settings, sys))
        discrepancies.append(max(_max_abs(q1_tq - q1), _max_abs(q2_tq - q2)))
    worst = max(discrepancies)
    return CorrespondenceReport(
        h_values=grid, discrepancies=discrepancies, max_discrepancy=worst, threshold=threshold, ok=worst <= threshold
    )
