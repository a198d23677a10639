"""forcedvi - forced variational integrators and their order verification harness."""

__version__ = "0.1.0"
