"""Numerical laboratory for variable-exponent elliptic problems with measure data."""

__version__ = "0.1.0"
