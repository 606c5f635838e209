"""Aggregate forecasting with latent per-grid capacities and a shared unit-output function."""

__version__ = "0.1.0"
