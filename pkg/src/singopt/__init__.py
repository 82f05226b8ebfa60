"""Optimization near non-isolated minima."""
__version__ = "0.1.0"
