"""Stable nonlinear system identification by Lagrangian relaxation of simulation error."""

__version__ = "0.1.0"
