"""Forecaster families behind a common fit/forecast contract."""
from .base import (FitResult, ForecasterSpec, discretize_normal, families, family_for, fit,
                   forecast, histogram_density, make_grid)
from . import seasonal, growth  # noqa: F401  (register families)
from .sir import SIRState, simulate_sir, sir_incidence, sir_step

__all__ = [
    "FitResult", "ForecasterSpec", "SIRState", "discretize_normal", "families", "family_for",
    "fit", "forecast", "histogram_density", "make_grid", "simulate_sir", "sir_incidence", "sir_step",
]
