"""Run configured experiments and write their artifacts.

Data artifacts (CSV and report JSON) depend only on the configuration; the
timestamp lives in metadata.json alone.
"""

import hashlib
import json
import logging
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel

from forced_vi import __version__
from forced_vi.config import ExperimentConfig
from forced_vi.continuous_flow import FlowOracle
from forced_vi.disc_qq import (
    DiscreteDataQQ,
    discrete_legendre_plus,
    exact_discrete_data_qq,
    midpoint_data_qq,
    to_qq,
    trapezoid_data_qq,
)
from forced_vi.disc_tq import (
    alpha_pair,
    exact_discrete_data_tq,
    make_exact_discretization,
    make_linear_discretization,
    quadrature_discrete_data,
    truncated_exact_friction,
    verify_discretization_axioms,
)
from forced_vi.fms_core import (
    StateTQ,
    SystemFMS,
    fiber_derivative,
    fiber_hessian,
    position_gradient,
    velocity_from_momentum,
)
from forced_vi.order_lab import (
    Scheme,
    TQScheme,
    Verdict,
    correspondence_check,
    exactness_check,
    global_error_experiment,
    order_of_flow_experiment,
)
from forced_vi.stepper import initialize_from_state, run_trajectory, run_trajectory_tq, trajectory_residuals
from forced_vi.systems import build_system, damped_particle
from forced_vi.utils import write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERDICT_FAIL = 2


class ExperimentOutcome(NamedTuple):
    exit_code: int
    artifacts: list[Path]
    summary: dict[str, Any]


def build_oracle(cfg: ExperimentConfig) -> tuple[SystemFMS, FlowOracle]:
    sys = build_system(cfg.system.name, cfg.system.params)
    return sys, FlowOracle.for_system(sys, cfg.solver)


def build_tq_scheme(cfg: ExperimentConfig, oracle: FlowOracle) -> TQScheme:
    """TQ data and discretization selected by cfg.discretization."""
    disc = cfg.discretization
    sys = oracle.sys
    plus, minus = alpha_pair(disc.alpha)
    if disc.kind == "truncated_exact":
        d, data = truncated_exact_friction(cfg.system.params["alpha"], disc.order_r)
        return TQScheme(data, d)
    if disc.kind == "exact":
        d = make_exact_discretization(oracle, plus, minus)
        return TQScheme(exact_discrete_data_tq(oracle, plus, minus, cfg.solver), d)
    if disc.kind == "linear":
        d = make_linear_discretization(sys.n, disc.alpha)
    else:
        d = make_exact_discretization(oracle, plus, minus)
    return TQScheme(quadrature_discrete_data(sys, d, disc.rule, disc.gauss_nodes, cfg.solver), d)


def build_qq_data(cfg: ExperimentConfig, oracle: FlowOracle) -> DiscreteDataQQ:
    """Q x Q data: built-in rules where they exist, otherwise to_qq of the TQ scheme."""
    disc = cfg.discretization
    if disc.kind == "exact":
        return exact_discrete_data_qq(oracle, cfg.solver)
    if disc.kind == "linear" and disc.alpha == "one_sided" and disc.rule == "midpoint":
        return midpoint_data_qq(oracle.sys, cfg.solver)
    if disc.kind == "linear" and disc.alpha == "one_sided" and disc.rule == "trapezoid":
        return trapezoid_data_qq(oracle.sys, cfg.solver)
    data, d = build_tq_scheme(cfg, oracle)
    return to_qq(data, d, cfg.solver, oracle)


def build_scheme(cfg: ExperimentConfig, oracle: FlowOracle) -> Scheme:
    if cfg.experiment.formulation == "qq":
        return build_qq_data(cfg, oracle)
    return build_tq_scheme(cfg, oracle)


def _initial_state(cfg: ExperimentConfig) -> StateTQ:
    return StateTQ(cfg.experiment.initial_state.q, cfg.experiment.initial_state.v)


def _declared_order(scheme: Scheme) -> Optional[int]:
    data = scheme.data if isinstance(scheme, TQScheme) else scheme
    return data.declared_order


def _simulate(cfg: ExperimentConfig, sys: SystemFMS, oracle: FlowOracle, out_dir: Path) -> tuple[list[Path], dict]:
    exp, settings = cfg.experiment, cfg.solver
    h, N, s0 = exp.h, exp.N, _initial_state(cfg)
    if exp.formulation == "tq":
        data, d = build_tq_scheme(cfg, oracle)
        trajectory = run_trajectory_tq(data, d, h, s0, N, settings, sys)
        velocities = trajectory.velocities
        residuals = [0.0] + trajectory.residual_norms
    else:
        data_qq = build_qq_data(cfg, oracle)
        q1 = initialize_from_state(data_qq, sys, h, s0.q, s0.v, settings)
        trajectory = run_trajectory(data_qq, h, s0.q, q1, N, settings, sys)
        q = trajectory.positions
        velocities = [s0.v.copy()]
        for k in range(1, N + 1):
            momentum = discrete_legendre_plus(data_qq, h, q[k - 1], q[k], settings)
            velocities.append(velocity_from_momentum(sys, q[k], momentum, settings, guess=velocities[-1]))
        residuals = [0.0] + trajectory_residuals(data_qq, trajectory, settings) + [0.0]

    n = sys.n
    header = ["k", "t"] + [f"q{i}" for i in range(n)] + [f"v{i}" for i in range(n)] + ["residual"]
    rows = [
        [k, float(k * h)] + [float(x) for x in q] + [float(x) for x in v] + [float(r)]
        for k, (q, v, r) in enumerate(zip(trajectory.positions, velocities, residuals))
    ]
    csv_path = write_csv(out_dir / "trajectory.csv", header, rows)
    summary = {
        "experiment": "simulate",
        "formulation": exp.formulation,
        "h": h,
        "N": N,
        "max_residual": float(max(residuals)),
        "final_q": [float(x) for x in trajectory.positions[-1]],
        "final_v": [float(x) for x in velocities[-1]],
        "ok": True,
    }
    return [csv_path, write_json(out_dir / "report.json", summary)], summary


def _order_rows(report) -> list[list]:
    return [[h, e, int(u)] for h, e, u in zip(report.h_values, report.errors, report.used_mask)]


def _order(cfg: ExperimentConfig, sys: SystemFMS, oracle: FlowOracle, out_dir: Path, threads: int) -> tuple[list[Path], dict]:
    exp = cfg.experiment
    scheme = build_scheme(cfg, oracle)
    r = exp.expected_order or _declared_order(scheme)
    if r is None:
        logger.info("data declares no order; checking for exactness")
    s0 = _initial_state(cfg)
    report = order_of_flow_experiment(scheme, oracle, r, s0, exp.h_grid, cfg.solver, exp.norm, threads)
    artifacts = [
        write_csv(out_dir / "order.csv", ["h", "error", "used"], _order_rows(report)),
        write_json(out_dir / "order.json", report.model_dump(mode="json")),
    ]
    summary = {"experiment": "order", **report.model_dump(mode="json"), "ok": bool(report.verdict and report.verdict.passed)}
    if exp.global_error:
        global_report = global_error_experiment(
            scheme, oracle, r, s0, exp.h_grid, exp.horizon, cfg.solver, exp.norm, threads
        )
        artifacts += [
            write_csv(out_dir / "global_order.csv", ["h", "error", "used"], _order_rows(global_report)),
            write_json(out_dir / "global_order.json", global_report.model_dump(mode="json")),
        ]
        summary["global_verdict"] = global_report.verdict.value if global_report.verdict else None
        summary["global_slope"] = global_report.slope
        summary["ok"] = summary["ok"] and bool(global_report.verdict and global_report.verdict.passed)
    return artifacts, summary


def _exactness(cfg: ExperimentConfig, sys: SystemFMS, oracle: FlowOracle, out_dir: Path) -> tuple[list[Path], dict]:
    exp = cfg.experiment
    data = None if cfg.discretization.kind == "exact" else build_qq_data(cfg, oracle)
    report = exactness_check(oracle, exp.h, _initial_state(cfg), exp.N, cfg.solver, data)
    summary = {"experiment": "exactness", **report.model_dump(mode="json")}
    return [write_json(out_dir / "exactness.json", summary)], summary


def _correspond(cfg: ExperimentConfig, sys: SystemFMS, oracle: FlowOracle, out_dir: Path) -> tuple[list[Path], dict]:
    exp = cfg.experiment
    grid = exp.h_grid or ([exp.h] if exp.h else [0.2, 0.1, 0.05])
    report = correspondence_check(build_tq_scheme(cfg, oracle), grid, _initial_state(cfg), cfg.solver, oracle=oracle)
    summary = {"experiment": "correspond", **report.model_dump(mode="json")}
    return [write_json(out_dir / "correspondence.json", summary)], summary


def config_digest(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_metadata(out_dir: Path, cfg: ExperimentConfig, command: str, threads: int, exit_code: int) -> Path:
    metadata = {
        "command": command,
        "config_sha256": config_digest(cfg),
        "exit_code": exit_code,
        "threads": threads,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
    }
    return write_json(out_dir / "metadata.json", metadata)


def run_experiment(cfg: ExperimentConfig, out_dir: Path, threads: int = 1) -> ExperimentOutcome:
    """Run cfg.experiment and write its artifacts into out_dir.

    Returns:
        Exit code 0 when the report passes, 2 when its verdict fails, plus the
        written paths and the summary record

    Raises:
        ForcedVIError: On solver or configuration failures (exit code 1 at the CLI)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sys, oracle = build_oracle(cfg)
    kind = cfg.experiment.kind
    logger.debug("running %s on %s with %s oracle", kind, sys.name, oracle.mode)
    if kind == "simulate":
        artifacts, summary = _simulate(cfg, sys, oracle, out_dir)
    elif kind == "order":
        artifacts, summary = _order(cfg, sys, oracle, out_dir, threads)
    elif kind == "exactness":
        artifacts, summary = _exactness(cfg, sys, oracle, out_dir)
    else:
        artifacts, summary = _correspond(cfg, sys, oracle, out_dir)
    exit_code = EXIT_OK if summary.get("ok") else EXIT_VERDICT_FAIL
    artifacts.append(write_metadata(out_dir, cfg, kind, threads, exit_code))
    return ExperimentOutcome(exit_code, artifacts, summary)


class CheckResult(BaseModel):
    name: str
    ok: bool
    detail: dict[str, Any]


def _derivative_check(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    defaults = {
        "damped_particle": {"alpha": 1.0},
        "forced_oscillator": {"mass": 1.0, "stiffness": 1.0, "damping": 0.1},
        "forced_pendulum": {"mass": 1.0, "length": 1.0, "gravity": 9.81, "damping": 0.2, "torque": 0.5},
        "damped_duffing": {"linear": -1.0, "cubic": 1.0, "damping": 0.3},
    }
    for name, params in defaults.items():
        sys = build_system(name, params)
        fd = sys.without_derivatives()
        for _ in range(20):
            s = StateTQ(rng.uniform(-2, 2, sys.n), rng.uniform(-2, 2, sys.n))
            for analytic, numeric in (
                (fiber_derivative(sys, s), fiber_derivative(fd, s)),
                (position_gradient(sys, s), position_gradient(fd, s)),
                (fiber_hessian(sys, s), fiber_hessian(fd, s)),
            ):
                gap = float(np.max(np.abs(analytic - numeric))) / (1.0 + float(np.max(np.abs(analytic))))
                worst = max(worst, gap)
    return CheckResult(name="derivatives", ok=worst <= 1e-6, detail={"max_relative_gap": worst})


def _closed_form_check(rng: np.random.Generator) -> CheckResult:
    alpha = 1.0
    oracle = FlowOracle.for_system(damped_particle(alpha))
    data = exact_discrete_data_tq(oracle)
    worst = 0.0
    for h in (0.1, 0.5, 1.0):
        for _ in range(3):
            s = StateTQ(rng.uniform(-1, 1, 1), rng.uniform(-1, 1, 1))
            v = float(s.v[0])
            e1, e2 = -np.expm1(-alpha * h), -np.expm1(-2 * alpha * h)
            L = v * v * e2 / (4 * alpha)
            f = -v * np.array([e1, (e1 - 0.5 * e2) / alpha])
            worst = max(worst, abs(data.L_cp(h, s) - L), float(np.max(np.abs(data.f_cp(h, s) - f))))
    return CheckResult(name="exact_tq_closed_form", ok=worst <= 1e-10, detail={"max_gap": worst})


def _axiom_check() -> CheckResult:
    sys = damped_particle(1.0)
    states = [StateTQ([0.0], [1.0]), StateTQ([0.5], [-0.7])]
    linear = make_linear_discretization(1)
    broken = replace(linear, alpha_plus=lambda h: 2.0 * h, kind="custom")
    reports = {
        "linear": verify_discretization_axioms(linear, states),
        "exact": verify_discretization_axioms(make_exact_discretization(FlowOracle.for_system(sys)), states),
        "truncated_exact(2)": verify_discretization_axioms(truncated_exact_friction(1.0, 2)[0], states),
        "broken_alpha": verify_discretization_axioms(broken, states),
    }
    ok = all(r.ok for k, r in reports.items() if k != "broken_alpha") and not reports["broken_alpha"].ok
    return CheckResult(name="discretization_axioms", ok=ok, detail={k: r._asdict() for k, r in reports.items()})


def _exactness_checks() -> list[CheckResult]:
    sys = damped_particle(1.0)
    oracle = FlowOracle.for_system(sys)
    s0 = StateTQ([0.0], [1.0])
    exact = exactness_check(oracle, 0.25, s0, 8)
    control = exactness_check(oracle, 0.25, s0, 8, data=midpoint_data_qq(sys))
    return [
        CheckResult(name="exactness", ok=exact.ok, detail=exact.model_dump(mode="json")),
        CheckResult(
            name="exactness_negative_control",
            ok=not control.ok,
            detail={"max_residual": control.max_residual, "max_position_gap": control.max_position_gap},
        ),
    ]


def _order_check() -> CheckResult:
    oracle = FlowOracle.for_system(damped_particle(1.0))
    s0 = StateTQ([0.0], [1.0])
    slopes, verdicts = [], []
    for r in (1, 2, 3):
        d, data = truncated_exact_friction(1.0, r)
        report = order_of_flow_experiment(TQScheme(data, d), oracle, r, s0)
        slopes.append(report.slope)
        verdicts.append(report.verdict)
    increasing = all(a is not None and b is not None and a < b for a, b in zip(slopes, slopes[1:]))
    ok = increasing and all(v == Verdict.PASS for v in verdicts)
    return CheckResult(name="truncated_exact_order", ok=ok, detail={"slopes": slopes, "verdicts": [v.value for v in verdicts]})


def _correspondence_check() -> CheckResult:
    sys = damped_particle(1.0)
    oracle = FlowOracle.for_system(sys)
    s0 = StateTQ([0.0], [1.0])
    grid = [0.2, 0.1, 0.05]
    linear = make_linear_discretization(1)
    schemes = {
        "exact": TQScheme(exact_discrete_data_tq(oracle), make_exact_discretization(oracle)),
        "midpoint": TQScheme(quadrature_discrete_data(sys, linear, "midpoint"), linear),
    }
    reports = {name: correspondence_check(scheme, grid, s0, oracle=oracle) for name, scheme in schemes.items()}
    return CheckResult(
        name="correspondence",
        ok=all(r.ok for r in reports.values()),
        detail={name: r.max_discrepancy for name, r in reports.items()},
    )


def run_selftest(seed: int, out_dir: Path) -> ExperimentOutcome:
    """Run the built-in property battery and write selftest.json.

    The seed only drives the random states of the derivative and closed-form checks.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    checks = [_derivative_check(rng), _closed_form_check(rng), _axiom_check()]
    checks += _exactness_checks()
    checks += [_order_check(), _correspondence_check()]
    summary = {
        "experiment": "selftest",
        "seed": seed,
        "checks": [check.model_dump(mode="json") for check in checks],
        "ok": all(check.ok for check in checks),
    }
    path = write_json(out_dir / "selftest.json", summary)
    return ExperimentOutcome(EXIT_OK if summary["ok"] else EXIT_VERDICT_FAIL, [path], summary)
