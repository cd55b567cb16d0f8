"""Numerical laboratory for the radial energy-critical Hartree equation."""

__version__ = "0.1.0"
