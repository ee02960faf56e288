"""Fitting/forecasting contract shared by every forecaster family."""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from ..errors import ArgumentError, HorizonError, TrainingError
from ..forecasts import BinnedForecast
from ..series import (PeakIncidence, PeakTiming, StepAhead, Target, ThresholdExceedance,
                      TimeSeries, resolve_season)

N_TRAJECTORIES = 2000
DEFAULT_MAX_HORIZON = 520


def make_grid(upper: float, width: float = 1.0, lower: float = 0.0) -> np.ndarray:
    """Edges ``lower, lower+width, ...`` reaching at least ``upper``.

    With ``lower=-0.5`` and ``width=1`` every bin is centred on an integer.
    """
    n = max(1, int(math.ceil((upper - lower) / width)))
    return lower + width * np.arange(n + 1)


@dataclass(frozen=True, eq=False)
class ForecasterSpec:
    family: str
    hyperparameters: dict = field(default_factory=dict)
    bin_grid: np.ndarray = field(default_factory=lambda: make_grid(1000.0, 1.0, 0.0))
    seed: int = 0
    name: Optional[str] = None

    def __post_init__(self):
        grid = np.array(self.bin_grid, dtype=float).ravel()
        if grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ArgumentError("bin_grid must be strictly increasing with at least 2 edges")
        # the straddling bin would otherwise leak mass below zero
        if grid[0] < 0 and grid[1] > 0:
            raise ArgumentError("bin_grid must not straddle 0; start it at 0 or put 0 on an edge")
        grid.setflags(write=False)
        object.__setattr__(self, "bin_grid", grid)
        object.__setattr__(self, "hyperparameters", dict(self.hyperparameters))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        family_for(self.family).check(self)

    @property
    def model_id(self) -> str:
        return self.name or self.family

    @property
    def size(self) -> int:
        """Number of covariates/parameters used for parsimony comparisons."""
        if "size" in self.hyperparameters:
            return int(self.hyperparameters["size"])
        return family_for(self.family).size(self)

    def hp(self, key, default=None):
        return self.hyperparameters.get(key, default)


@dataclass
class FitResult:
    family: str
    parameters: dict
    training_loss: float
    residual_sd: float
    converged: bool = True
    n_obs: int = 0
    state: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.residual_sd) and self.residual_sd >= 0):
            raise TrainingError(f"residual sd {self.residual_sd} is not a finite non-negative number")
        if not self.training_loss >= 0:
            raise TrainingError(f"training loss {self.training_loss} is negative")

    @property
    def training_mse(self) -> float:
        return self.training_loss / self.n_obs if self.n_obs else float("nan")

    def to_json(self) -> str:
        return json.dumps({
            "family": self.family,
            "parameters": self.parameters,
            "training_loss": self.training_loss,
            "residual_sd": self.residual_sd,
            "converged": self.converged,
            "n_obs": self.n_obs,
        }, sort_keys=True)


class Family:
    """One forecaster family.  Subclasses override what differs."""

    name = ""

    def check(self, spec: ForecasterSpec) -> None:
        pass

    def size(self, spec: ForecasterSpec) -> int:
        return 1

    def min_train(self, spec: ForecasterSpec, cycle_length: int) -> int:
        return 4

    def min_history(self, spec: ForecasterSpec, cycle_length: int) -> int:
        """Observations a forecast must be able to condition on."""
        return 1

    def fit(self, spec, train: TimeSeries, holdout: frozenset) -> FitResult:
        raise NotImplementedError

    def mean_path(self, spec, fit: FitResult, history: TimeSeries, steps: int) -> np.ndarray:
        raise NotImplementedError

    def variance_scale(self, steps: np.ndarray) -> np.ndarray:
        return np.ones_like(steps, dtype=float)

    def marginal(self, spec, fit, history, step: int, path: np.ndarray) -> BinnedForecast:
        sd = fit.residual_sd * math.sqrt(self.variance_scale(np.array([step]))[0])
        return discretize_normal(path[step - 1], sd, spec.bin_grid)

    def sample_paths(self, spec, fit, history, path: np.ndarray, rng) -> np.ndarray:
        steps = np.arange(1, path.size + 1)
        eps = rng.standard_normal((N_TRAJECTORIES, path.size))
        draws = path + fit.residual_sd * np.sqrt(self.variance_scale(steps)) * eps
        return np.maximum(draws, 0.0)


_FAMILIES: dict[str, Family] = {}


def register(cls):
    _FAMILIES[cls.name] = cls()
    return cls


def family_for(name: str) -> Family:
    try:
        return _FAMILIES[name]
    except KeyError:
        raise ArgumentError(f"unknown forecaster family {name!r}; known: {sorted(_FAMILIES)}") from None


def families() -> list[str]:
    return sorted(_FAMILIES)


# ------------------------------------------------------------- densities on the grid

def point_mass(x: float, edges: np.ndarray) -> BinnedForecast:
    probs = np.zeros(edges.size - 1)
    x = min(max(x, edges[0]), edges[-1])
    b = min(int(np.searchsorted(edges, x, side="right")) - 1, probs.size - 1)
    probs[max(b, 0)] = 1.0
    return BinnedForecast(edges, probs)


def discretize_normal(mean: float, sd: float, edges: np.ndarray) -> BinnedForecast:
    """Normal(mean, sd) truncated at 0, restricted to the grid and renormalised."""
    if not math.isfinite(mean):
        raise TrainingError(f"non-finite forecast mean {mean}")
    if sd <= 1e-12 * max(1.0, abs(mean)):
        return point_mass(max(mean, 0.0), edges)
    e = np.maximum(edges, 0.0)
    cdf = norm.cdf((e - mean) / sd)
    probs = np.diff(cdf)
    total = probs.sum()
    if not total > 1e-12:
        # all mass sits beyond the grid; collapse onto the nearest bin
        return point_mass(max(mean, 0.0), edges)
    return BinnedForecast(edges, probs / total)


def histogram_density(values: np.ndarray, edges: np.ndarray) -> BinnedForecast:
    """Empirical distribution of ``values`` on a grid; out-of-range values go to the end bins."""
    v = np.clip(np.asarray(values, dtype=float), edges[0], edges[-1])
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, edges.size - 2)
    counts = np.bincount(idx, minlength=edges.size - 1).astype(float)
    return BinnedForecast(edges, counts / counts.sum())


def binary_density(p: float) -> BinnedForecast:
    """Bernoulli forecast on the outcomes 0 and 1."""
    return BinnedForecast([-0.5, 0.5, 1.5], [1.0 - p, p])


# ------------------------------------------------------------- public entry points

def _stable_rng(spec: ForecasterSpec, history: TimeSeries, origin_t: int):
    loc = zlib.crc32(history.location_id.encode("utf-8"))
    ss = np.random.SeedSequence([spec.seed & 0xFFFFFFFF, spec.seed >> 32, loc,
                                 len(history), origin_t & 0xFFFFFFFF])
    return np.random.default_rng(ss)


def fit(spec: ForecasterSpec, train: TimeSeries, holdout=None) -> FitResult:
    """Fit ``spec`` to ``train``.

    ``holdout`` is an optional set of 1-based indices the fit must ignore
    (used by leave-one-season-out cross-validation).
    """
    fam = family_for(spec.family)
    need = fam.min_train(spec, train.cycle_length)
    held = frozenset(holdout or ())
    available = len(train) - sum(1 for i in held if 1 <= i <= len(train))
    if available < need:
        raise TrainingError(f"{spec.family} needs at least {need} training observations, got {available}")
    return fam.fit(spec, train, held)


def forecast(spec: ForecasterSpec, fit_result: FitResult, train: TimeSeries,
             targets) -> list[BinnedForecast]:
    """Predictive densities for ``targets`` conditional on the observations in ``train``.

    Step-ahead targets get the family's marginal density at the matching
    horizon.  Peak, peak-timing and exceedance targets are derived from
    seeded Monte-Carlo trajectories.
    """
    fam = family_for(spec.family)
    if fit_result.family != spec.family:
        raise ArgumentError(f"fit is for {fit_result.family}, spec is {spec.family}")
    if len(train) < fam.min_history(spec, train.cycle_length):
        raise HorizonError(
            f"{spec.family} needs {fam.min_history(spec, train.cycle_length)} observations "
            f"of history, got {len(train)}")
    n = len(train)
    max_h = int(spec.hp("max_horizon", DEFAULT_MAX_HORIZON))
    plans = []
    for tg in targets:
        kind = tg.kind
        if isinstance(kind, (StepAhead, ThresholdExceedance)):
            last = tg.origin_t + kind.k - n
            first = last
        else:
            season = kind.season
            if isinstance(season, str):
                season = train.season(season)
            first, last = season.start - n, season.end - n
        if last > max_h:
            raise HorizonError(f"target {tg.describe()} lies {last} steps past the data (max {max_h})")
        if isinstance(kind, (StepAhead, ThresholdExceedance)) and first < 1:
            raise HorizonError(f"target {tg.describe()} at origin {tg.origin_t} is not after the data")
        plans.append(last)
    steps = max([h for h in plans if h > 0], default=0)
    path = fam.mean_path(spec, fit_result, train, steps) if steps else np.zeros(0)
    draws_cache = {}

    def draws_for(origin_t):
        if origin_t not in draws_cache:
            rng = _stable_rng(spec, train, origin_t)
            draws_cache[origin_t] = fam.sample_paths(spec, fit_result, train, path, rng)
        return draws_cache[origin_t]

    out = []
    for tg in targets:
        kind = tg.kind
        if isinstance(kind, StepAhead):
            out.append(fam.marginal(spec, fit_result, train, tg.origin_t + kind.k - n, path))
        elif isinstance(kind, ThresholdExceedance):
            h = tg.origin_t + kind.k - n
            sims = draws_for(tg.origin_t)[:, h - 1]
            out.append(binary_density(float(np.mean(sims > kind.threshold))))
        else:
            out.append(_seasonal_target(kind, train, draws_for(tg.origin_t), spec.bin_grid))
    return out


def _seasonal_target(kind, train: TimeSeries, draws: np.ndarray, grid) -> BinnedForecast:
    season = kind.season if not isinstance(kind.season, str) else train.season(kind.season)
    n = len(train)
    observed = train.values[season.start - 1:min(season.end, n)]
    future_cols = range(max(season.start - n, 1) - 1, season.end - n) if season.end > n else range(0)
    future = draws[:, list(future_cols)] if len(future_cols) else np.zeros((N_TRAJECTORIES, 0))
    full = np.concatenate([np.broadcast_to(observed, (N_TRAJECTORIES, observed.size)), future], axis=1)
    if isinstance(kind, PeakIncidence):
        return histogram_density(full.max(axis=1), grid)
    first_idx = season.start + np.argmax(full, axis=1)
    edges = np.arange(season.start, season.end + 2) - 0.5
    return histogram_density(first_idx, edges)
