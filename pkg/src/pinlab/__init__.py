"""Simulation and numerics for the Laplacian pinning model."""

__version__ = "0.1.0"
