"""Numerical toolkit for stability of absolutely continuous spectrum in 1-D Schrodinger operators."""

__version__ = "0.1.0"
