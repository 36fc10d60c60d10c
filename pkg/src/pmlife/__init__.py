"""Prediction-market lifecycle data engine."""

__version__ = "0.1.0"
