"""Stochastic stellarator coil design under Gaussian-process manufacturing errors."""

__version__ = "0.1.0"
