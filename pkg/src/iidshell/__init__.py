"""Exact iid sampling from unnormalized densities by shell decomposition."""

__version__ = "0.1.0"
