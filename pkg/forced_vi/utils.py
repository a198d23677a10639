"""Console, logging and artifact helpers for the forcedvi CLI."""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

console = Console()
err_console = Console(stderr=True)


def print_success(message: str) -> None:
    """Print success message."""
    console.print(f"[green]✓[/green] {message}")


def print_error(message: str) -> None:
    """Print error message to standard error."""
    err_console.print(f"[red]✗[/red] {message}", style="red")


def print_info(message: str) -> None:
    """Print info message."""
    console.print(f"[blue]ℹ[/blue] {message}")


def print_warning(message: str) -> None:
    """Print warning message to standard error."""
    err_console.print(f"[yellow]⚠[/yellow] {message}", style="yellow")


def print_json(data: dict[str, Any]) -> None:
    """Print JSON data in a formatted way."""
    console.print_json(data=data)


def create_table(title: str, columns: list[str]) -> Table:
    """Create a rich table with consistent styling.

    Args:
        title: Table title
        columns: List of column names

    Returns:
        Configured Table object
    """
    table = Table(
        title=title,
        box=box.ROUNDED,
        show_header=True,
        header_style="bold cyan",
        border_style="blue"
    )

    for column in columns:
        table.add_column(column)

    return table


def print_panel(content: str, title: str, style: str = "blue") -> None:
    """Print content in a panel.

    Args:
        content: Panel content
        title: Panel title
        style: Panel border style
    """
    panel = Panel(content, title=title, border_style=style, box=box.ROUNDED)
    console.print(panel)


def setup_logging(verbose: bool = False) -> None:
    """Route library logging to standard error through rich.

    Args:
        verbose: DEBUG level when set, WARNING otherwise
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=verbose)],
        force=True,
    )


def format_float(value: float) -> str:
    """Format a float with 17 significant digits (exact round trip)."""
    return format(float(value), ".17g")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write rows as CSV, floats in 17-significant-digit form.

    Args:
        path: Output file
        header: Column names
        rows: Row values; floats are formatted, everything else is str()-ed

    Returns:
        The written path
    """
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(x) if isinstance(x, float) else str(x) for x in row])
    return Path(path)


def write_json(path: Path, data: dict[str, Any]) -> Path:
    """Write a report as pretty-printed JSON with sorted keys."""
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return Path(path)


def format_verdict(verdict: Any) -> str:
    """Colour a verdict or ok flag for the console."""
    value = getattr(verdict, "value", verdict)
    if value is True or value in ("pass", "exact"):
        return f"[green]{'ok' if value is True else value}[/green]"
    if value is None:
        return "[dim]n/a[/dim]"
    return f"[red]{'failed' if value is False else value}[/red]"
