"""Command groups for the forcedvi CLI."""
