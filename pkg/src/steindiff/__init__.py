"""Diffusions with a prescribed invariant density, their Stein equations, and
Monte Carlo Stein bounds for smooth functionals of Gaussian vectors."""

__version__ = "0.1.0"
