"""Nonlinear age-structured population dynamics: simulation, equilibria and stability."""

__version__ = "0.1.0"
