"""Finite elements for the relaxed micromorphic and gauge-invariant incompatible elasticity models."""

__version__ = "0.1.0"
