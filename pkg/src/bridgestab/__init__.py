"""Nonlinear longitudinal modes of a suspension-bridge deck and their torsional stability."""

__version__ = "0.1.0"
