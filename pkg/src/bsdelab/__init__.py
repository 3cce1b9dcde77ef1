"""Numerical laboratory for BSDEs with jumps and singular terminal values."""

__version__ = "0.1.0"
