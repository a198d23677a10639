"""Self-test command."""

from pathlib import Path

import typer

from forced_vi.errors import ForcedVIError
from forced_vi.experiments import EXIT_OK, run_selftest
from forced_vi.utils import console, create_table, format_verdict, print_error, print_info, print_success


def selftest(
    out: Path = typer.Option(Path("results"), "--out", "-o", help="Output directory for selftest.json"),
    seed: int = typer.Option(0, "--seed", min=0, max=2**64 - 1, help="Seed for the random test states"),
):
    """Run the built-in property battery (exactness, order, correspondence, axioms)."""
    try:
        outcome = run_selftest(seed, out)
    except ForcedVIError as e:
        print_error(f"Solver error: {e}")
        raise typer.Exit(1)

    table = create_table(f"Self-test (seed {seed})", ["Check", "Result"])
    for check in outcome.summary["checks"]:
        table.add_row(check["name"], format_verdict(check["ok"]))
    console.print(table)
    print_info(f"Wrote {outcome.artifacts[0]}")

    if outcome.exit_code != EXIT_OK:
        print_error("Self-test failed")
        raise typer.Exit(outcome.exit_code)
    print_success("All self-test checks passed")
