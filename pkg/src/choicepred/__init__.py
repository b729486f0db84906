"""Predicting repeated risky choice with behavioural models and tree ensembles."""

__version__ = "0.1.0"
