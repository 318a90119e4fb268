"""Spectral soil-property regression with parametric 1-D CNNs."""

__version__ = "0.1.0"
