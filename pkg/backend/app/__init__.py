"""Quantum-fractal trajectories in the infinite square well."""

__version__ = "0.1.0"
