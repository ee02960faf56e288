"""Synthetic seasonal incidence for experiments and tests."""
from __future__ import annotations

import numpy as np

from .errors import ArgumentError
from .series import Season, TimeSeries

DEFAULT_LAGS = (0.5, -0.3, 0.25)


def seasonal_ar_data(n_seasons: int, cycle_length: int = 26, lags=DEFAULT_LAGS,
                     level: float = 100.0, amplitude: float = 40.0, noise_sd: float = 8.0,
                     seed: int = 0, burn_in_cycles: int = 1,
                     location_id: str = "synthetic") -> TimeSeries:
    """AR process around a sinusoidal seasonal mean, clipped at zero.

    The first ``burn_in_cycles`` cycles are unlabelled; the remaining
    ``n_seasons`` cycles carry season labels ``S01``, ``S02``, ...
    """
    if n_seasons < 1 or cycle_length < 1 or burn_in_cycles < 0:
        raise ArgumentError("need n_seasons >= 1, cycle_length >= 1, burn_in_cycles >= 0")
    lags = np.asarray(lags, dtype=float)
    p = lags.size
    L = cycle_length
    n = (n_seasons + burn_in_cycles) * L
    rng = np.random.default_rng(seed)
    t = np.arange(1, n + 1)
    mean = level + amplitude * np.sin(2 * np.pi * t / L)
    dev = np.zeros(n + p)
    eps = noise_sd * rng.standard_normal(n + p)
    for i in range(p, n + p):
        dev[i] = lags @ dev[i - p:i][::-1] + eps[i]
    values = np.maximum(mean + dev[p:], 0.0)
    first = burn_in_cycles * L
    seasons = tuple(Season(f"S{i + 1:02d}", first + i * L + 1, first + (i + 1) * L)
                    for i in range(n_seasons))
    return TimeSeries(location_id, values, L, 1, None, seasons)
