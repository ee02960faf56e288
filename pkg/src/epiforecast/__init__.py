"""Forecasting and forecast evaluation for seasonal infectious-disease surveillance data."""

__version__ = "0.1.0"
