"""Geometry-aware Bayesian optimization on spheres and SPD matrices."""

__version__ = "0.1.0"
