"""Numerical verification of a quantitative Carleman estimate for
second order elliptic operators with Lipschitz coefficients."""

__version__ = "0.1.0"
