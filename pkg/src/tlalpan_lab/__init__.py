"""Numerical laboratory for time-symmetric quantum mechanics protocols."""

__version__ = "0.1.0"
