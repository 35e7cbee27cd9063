"""Exponential time differencing for layered ocean tracer transport."""

__version__ = "0.1.0"
