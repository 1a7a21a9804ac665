"""Dyson Brownian motion, the semicircular flow and local-statistics diagnostics."""

__version__ = "0.1.0"
