"""Spectral clustering of incomplete data with the probabilistic cluster kernel."""

__version__ = "0.1.0"
