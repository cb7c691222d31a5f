"""Pulse-pair propagation in three-level media under adiabatic following."""

__version__ = "0.1.0"
