"""Density-of-states quantum phase estimation: simulation and spectrum reconstruction."""

__version__ = "0.1.0"
