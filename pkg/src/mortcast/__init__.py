"""Fitting, improving and forecasting stochastic mortality models."""

__version__ = "0.1.0"
