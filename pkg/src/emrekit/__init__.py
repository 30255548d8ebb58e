"""Noisy circuit simulation with PEC, EMRE and hybrid error-mitigation estimators."""
__version__ = "0.1.0"
