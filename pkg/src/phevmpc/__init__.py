"""Closed-loop MPC co-optimization of adaptive cruise control and PHEV energy management."""

__version__ = "0.1.0"
