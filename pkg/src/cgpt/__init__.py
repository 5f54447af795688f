"""Causally-guided pairwise transformer forecasting."""

__version__ = "0.1.0"
