"""Main CLI application for forcedvi."""

import typer

from forced_vi.commands import config_cmd, experiment_cmd, selftest_cmd
from forced_vi.utils import console, setup_logging

app = typer.Typer(
    name="forcedvi",
    help="forcedvi - Forced variational integrators and their order verification",
    add_completion=False,
)

# Add command groups
app.add_typer(config_cmd.app, name="config")

app.command("simulate")(experiment_cmd.simulate)
app.command("order")(experiment_cmd.order)
app.command("exactness")(experiment_cmd.exactness)
app.command("correspond")(experiment_cmd.correspond)
app.command("selftest")(selftest_cmd.selftest)


def version_callback(value: bool):
    """Show version and exit."""
    if value:
        from forced_vi import __version__
        console.print(f"forcedvi v{__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: bool = typer.Option(
        None,
        "--version",
        "-V",
        callback=version_callback,
        is_eager=True,
        help="Show version and exit"
    ),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log solver details to standard error"),
):
    """
    forcedvi - run forced variational integrator experiments from JSON configurations.

    Get started with an example configuration:

        forcedvi config example --output order.json

    Then run it:

        forcedvi order --config order.json --out results

    For help with a specific command:

        forcedvi [COMMAND] --help
    """
    setup_logging(verbose)


if __name__ == "__main__":
    app()
