"""Experiment commands: simulate, order, exactness and correspond."""

from pathlib import Path

import typer
from pydantic import ValidationError

from forced_vi.commands.config_cmd import report_schema_error
from forced_vi.config import ExperimentConfig, ExperimentSpec, load_config, threads_from_env
from forced_vi.errors import ForcedVIError, SchemaError, SchemaViolation, TrajectoryAborted
from forced_vi.experiments import EXIT_OK, ExperimentOutcome, run_experiment
from forced_vi.utils import console, create_table, format_verdict, print_error, print_info, print_success

CONFIG_OPTION = typer.Option(..., "--config", "-c", help="JSON experiment configuration")
OUT_OPTION = typer.Option(Path("results"), "--out", "-o", help="Output directory for artifacts")


def _with_kind(cfg: ExperimentConfig, kind: str) -> ExperimentConfig:
    """The configuration with its experiment kind replaced by the command's."""
    if cfg.experiment.kind == kind:
        return cfg
    try:
        experiment = ExperimentSpec.model_validate({**cfg.experiment.model_dump(), "kind": kind})
    except ValidationError as e:
        raise SchemaError(
            [SchemaViolation("experiment." + ".".join(str(p) for p in err["loc"]), err["msg"]) for err in e.errors()]
        )
    return cfg.model_copy(update={"experiment": experiment})


def _show(outcome: ExperimentOutcome) -> None:
    summary = outcome.summary
    table = create_table(f"{summary['experiment']} results", ["Field", "Value"])
    for key in ("formulation", "h", "N", "slope", "expected_slope", "r_squared", "verdict", "global_slope",
                "global_verdict", "max_residual", "max_position_gap", "max_discrepancy", "ok"):
        if key in summary:
            value = summary[key]
            table.add_row(key, format_verdict(value) if key in ("verdict", "global_verdict", "ok") else str(value))
    console.print(table)
    for path in outcome.artifacts:
        print_info(f"Wrote {path}")


def run_command(kind: str, config: Path, out: Path) -> None:
    """Load, run and report one experiment; exit 0, 1 or 2."""
    try:
        cfg = _with_kind(load_config(config), kind)
        outcome = run_experiment(cfg, out, threads_from_env())
    except SchemaError as e:
        report_schema_error(e)
        raise typer.Exit(1)
    except TrajectoryAborted as e:
        print_error(f"Trajectory aborted after {e.trajectory.N} steps: {e}")
        raise typer.Exit(1)
    except ForcedVIError as e:
        print_error(f"Solver error: {e}")
        raise typer.Exit(1)
    except ValueError as e:
        print_error(str(e))
        raise typer.Exit(1)

    _show(outcome)
    if outcome.exit_code != EXIT_OK:
        print_error(f"{kind} experiment did not pass")
        raise typer.Exit(outcome.exit_code)
    print_success(f"{kind} experiment passed")


def simulate(config: Path = CONFIG_OPTION, out: Path = OUT_OPTION):
    """Run a discrete trajectory and write trajectory.csv."""
    run_command("simulate", config, out)


def order(config: Path = CONFIG_OPTION, out: Path = OUT_OPTION):
    """Estimate the convergence order and write order.csv and order.json."""
    run_command("order", config, out)


def exactness(config: Path = CONFIG_OPTION, out: Path = OUT_OPTION):
    """Check that flow samples solve the exact discrete equations."""
    run_command("exactness", config, out)


def correspond(config: Path = CONFIG_OPTION, out: Path = OUT_OPTION):
    """Compare the TQ step with the Q x Q step of the transported data."""
    run_command("correspond", config, out)
