"""Gradient flows on varying Hilbert spaces: minimizing movements, connecting
operators and Mosco-convergence diagnostics."""

__version__ = "0.1.0"
