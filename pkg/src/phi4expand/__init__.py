"""Spectral toolkit for the low-temperature expansion of the 2D Phi^4 measure."""

__version__ = "0.1.0"
