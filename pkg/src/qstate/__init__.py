"""Quantum-state reconstruction from simulated homodyne, photon-counting and
two-level probe data."""

__version__ = "0.1.0"
