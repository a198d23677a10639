"""Configuration commands."""

import json
from pathlib import Path

import typer

from forced_vi.config import example_config, load_config, save_config
from forced_vi.errors import SchemaError
from forced_vi.utils import print_error, print_info, print_json, print_panel, print_success

app = typer.Typer(help="Validate and inspect experiment configurations")


def report_schema_error(e: SchemaError) -> None:
    """Print one line per schema violation."""
    print_error("Invalid configuration")
    for violation in e.violations:
        print_error(f"  {violation.path}: {violation.message}")


@app.command("validate")
def validate_config(path: Path = typer.Argument(..., help="JSON configuration file")):
    """Check a configuration file against the schema."""
    try:
        cfg = load_config(path)
    except SchemaError as e:
        report_schema_error(e)
        raise typer.Exit(1)

    print_success(f"{path} is valid ({cfg.experiment.kind} experiment on {cfg.system.name})")


@app.command("show")
def show_config(path: Path = typer.Argument(..., help="JSON configuration file")):
    """Show a configuration with every default filled in."""
    try:
        cfg = load_config(path)
    except SchemaError as e:
        report_schema_error(e)
        raise typer.Exit(1)

    content = f"""System: {cfg.system.name} {json.dumps(cfg.system.params, sort_keys=True)}
Discretization: {cfg.discretization.kind} (rule {cfg.discretization.rule}, alpha {cfg.discretization.alpha})
Experiment: {cfg.experiment.kind} on {cfg.experiment.formulation}
Config File: {path}"""
    print_panel(content, "forcedvi Configuration", "green")
    print_json(cfg.model_dump(mode="json"))


@app.command("example")
def show_example(
    output: Path = typer.Option(None, "--output", "-o", help="Write the example to this file"),
):
    """Print or write an example configuration."""
    cfg = example_config()
    if output is None:
        print_json(cfg.model_dump(mode="json"))
        return

    try:
        save_config(cfg, output)
    except OSError as e:
        print_error(f"Failed to save configuration: {e}")
        raise typer.Exit(1)
    print_success(f"Example configuration saved to {output}")
    print_info(f"Run it with: forcedvi order --config {output} --out results")
