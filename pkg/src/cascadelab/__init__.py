"""Numerical laboratory for averaged cascade models with transport noise on the torus."""

__version__ = "0.1.0"
