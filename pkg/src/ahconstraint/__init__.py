"""Numerical verification toolkit for the vacuum constraint operator on hyperbolic space."""

__version__ = "0.1.0"
