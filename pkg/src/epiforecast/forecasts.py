"""Point, interval, binned and sample forecasts, plus the JSON exchange document.

Binned densities spread each bin's mass uniformly over the bin, so the CDF
is piecewise linear through the cumulative mass at the edges.  Sample
forecasts use the empirical CDF.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ArgumentError, ForecastValidationError
from .series import (PeakIncidence, PeakTiming, Season, StepAhead, Target,
                     ThresholdExceedance)

MASS_TOL = 1e-9


def _ro(values) -> np.ndarray:
    arr = np.array(values, dtype=float).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PointForecast:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class IntervalForecast:
    alpha: float
    lower: float
    upper: float

    def __post_init__(self):
        for name in ("alpha", "lower", "upper"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True, eq=False)
class BinnedForecast:
    edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "edges", _ro(self.edges))
        object.__setattr__(self, "probs", _ro(self.probs))

    def __eq__(self, other):
        if not isinstance(other, BinnedForecast):
            return NotImplemented
        return np.array_equal(self.edges, other.edges) and np.array_equal(self.probs, other.probs)

    __hash__ = None

    @property
    def n_bins(self) -> int:
        return self.probs.size

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def cumulative(self) -> np.ndarray:
        """Cumulative mass at each edge, starting from 0."""
        return np.concatenate(([0.0], np.cumsum(self.probs)))

    def bin_of(self, z: float) -> int:
        """Index of the half-open bin ``[lo, hi)`` holding ``z``; the last bin is closed.

        Returns -1 when ``z`` lies outside the support.
        """
        e = self.edges
        if z < e[0] or z > e[-1] or math.isnan(z):
            return -1
        if z == e[-1]:
            return self.n_bins - 1
        return int(np.searchsorted(e, z, side="right")) - 1


@dataclass(frozen=True, eq=False)
class SampleForecast:
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", _ro(self.samples))

    def __eq__(self, other):
        if not isinstance(other, SampleForecast):
            return NotImplemented
        return np.array_equal(self.samples, other.samples)

    __hash__ = None

    @property
    def sorted(self) -> np.ndarray:
        return np.sort(self.samples)


Density = Union[BinnedForecast, SampleForecast]
Forecast = Union[PointForecast, IntervalForecast, BinnedForecast, SampleForecast]


# ------------------------------------------------------------- validation

def validate(forecast, incidence: bool = False) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid).

    With ``incidence=True`` any probability placed below zero is flagged too.
    Never raises on malformed input.
    """
    problems = []
    try:
        if isinstance(forecast, BinnedForecast):
            e, p = forecast.edges, forecast.probs
            if p.size < 1:
                problems.append("no bins")
            if e.size != p.size + 1:
                problems.append(f"{e.size} edges for {p.size} bins")
            if not np.all(np.isfinite(e)):
                problems.append("edges not finite")
            elif e.size > 1 and np.any(np.diff(e) <= 0):
                problems.append("edges not strictly increasing")
            if not np.all(np.isfinite(p)):
                problems.append("probabilities not finite")
            else:
                if np.any(p < 0):
                    problems.append("negative probability")
                mass = float(p.sum())
                if abs(mass - 1.0) > MASS_TOL:
                    problems.append(f"mass {mass:.6g} ≠ 1")
                if incidence and e.size == p.size + 1 and p.size and np.any(p[e[:-1] < 0] > 0):
                    problems.append("support extends below 0")
        elif isinstance(forecast, SampleForecast):
            s = forecast.samples
            if s.size < 1:
                problems.append("no samples")
            elif not np.all(np.isfinite(s)):
                problems.append("samples not finite")
            elif incidence and np.any(s < 0):
                problems.append("support extends below 0")
        elif isinstance(forecast, PointForecast):
            if not math.isfinite(forecast.value):
                problems.append("point value not finite")
            elif incidence and forecast.value < 0:
                problems.append("support extends below 0")
        elif isinstance(forecast, IntervalForecast):
            if not 0 < forecast.alpha < 1:
                problems.append(f"alpha {forecast.alpha} not in (0, 1)")
            if not (math.isfinite(forecast.lower) and math.isfinite(forecast.upper)):
                problems.append("interval bounds not finite")
            elif forecast.lower > forecast.upper:
                problems.append("lower bound above upper bound")
            elif incidence and forecast.lower < 0:
                problems.append("support extends below 0")
        else:
            problems.append(f"unsupported forecast type {type(forecast).__name__}")
    except Exception as exc:  # validation must never blow up on garbage input
        problems.append(f"unreadable forecast: {exc}")
    return problems


def require_valid(forecast, incidence: bool = False):
    problems = validate(forecast, incidence)
    if problems:
        raise ForecastValidationError(problems)
    return forecast


# ------------------------------------------------------------- CDF and quantiles

def cdf_at(density, z: float) -> float:
    if isinstance(density, BinnedForecast):
        e = density.edges
        if z <= e[0]:
            return 0.0
        if z >= e[-1]:
            return 1.0
        return float(min(1.0, np.interp(z, e, density.cumulative())))
    if isinstance(density, SampleForecast):
        return float(np.count_nonzero(density.samples <= z)) / density.samples.size
    if isinstance(density, PointForecast):
        return 1.0 if z >= density.value else 0.0
    raise TypeError(f"no CDF for {type(density).__name__}")


def quantile(density, p: float) -> float:
    """Smallest ``x`` with ``F(x) >= p``, for ``p`` in (0, 1)."""
    if not 0 < p < 1:
        raise ArgumentError(f"quantile level {p} not in (0, 1)")
    if isinstance(density, BinnedForecast):
        c = density.cumulative()
        probs = density.probs
        b = int(np.searchsorted(c[1:], p, side="left"))
        positive = np.flatnonzero(probs > 0)
        b = min(max(b, int(positive[0])), int(positive[-1]))
        lo, hi = density.edges[b], density.edges[b + 1]
        frac = (p - c[b]) / probs[b]
        return float(lo + min(max(frac, 0.0), 1.0) * (hi - lo))
    if isinstance(density, SampleForecast):
        xs = density.sorted
        # inverse empirical CDF; the epsilon absorbs n*p landing a hair above an integer
        rank = math.ceil(xs.size * p - 1e-9)
        return float(xs[min(max(rank, 1), xs.size) - 1])
    if isinstance(density, PointForecast):
        return density.value
    raise TypeError(f"no quantiles for {type(density).__name__}")


def mean_of(density) -> float:
    if isinstance(density, BinnedForecast):
        return float(np.dot(density.midpoints, density.probs) / density.probs.sum())
    if isinstance(density, SampleForecast):
        return float(np.mean(density.samples))
    if isinstance(density, PointForecast):
        return density.value
    raise TypeError(f"no mean for {type(density).__name__}")


def median_of(density) -> float:
    if isinstance(density, SampleForecast):
        return float(np.median(density.samples))
    return quantile(density, 0.5)


def point_from_density(density, loss: str = "absolute") -> PointForecast:
    """Optimal point summary: the mean under squared loss, the median under absolute loss."""
    require_valid(density)
    if loss == "squared":
        return PointForecast(mean_of(density))
    if loss == "absolute":
        return PointForecast(median_of(density))
    raise ArgumentError(f"unknown loss {loss!r}; expected 'squared' or 'absolute'")


def interval_from_density(density, alpha: float) -> IntervalForecast:
    """Equal-tailed ``(1 - alpha)`` prediction interval."""
    if not 0 < alpha < 1:
        raise ArgumentError(f"alpha {alpha} not in (0, 1)")
    require_valid(density)
    return IntervalForecast(alpha, quantile(density, alpha / 2), quantile(density, 1 - alpha / 2))


# ------------------------------------------------------------- JSON documents

_REPR_FIELDS = {
    "binned": ("edges", "probs"),
    "samples": ("samples",),
    "point": ("value",),
    "interval": ("alpha", "lower", "upper"),
}
_COMMON_FIELDS = ("location", "origin_t", "target", "repr")


def target_to_json(target: Target) -> dict:
    kind = target.kind
    if isinstance(kind, StepAhead):
        return {"type": "step_ahead", "k": kind.k}
    if isinstance(kind, ThresholdExceedance):
        return {"type": "threshold_exceedance", "k": kind.k, "threshold": kind.threshold}
    season = kind.season
    if isinstance(season, Season):
        season = {"label": season.label, "start": season.start, "end": season.end}
    name = "peak_incidence" if isinstance(kind, PeakIncidence) else "peak_timing"
    return {"type": name, "season": season}


def target_from_json(doc: dict, origin_t: int) -> Target:
    if not isinstance(doc, dict) or "type" not in doc:
        raise ForecastValidationError(["target must be an object with a 'type'"])
    kind = doc["type"]
    allowed = {
        "step_ahead": {"type", "k"},
        "threshold_exceedance": {"type", "k", "threshold"},
        "peak_incidence": {"type", "season"},
        "peak_timing": {"type", "season"},
    }
    if kind not in allowed:
        raise ForecastValidationError([f"unknown target type {kind!r}"])
    if set(doc) != allowed[kind]:
        raise ForecastValidationError(
            [f"target {kind} needs fields {sorted(allowed[kind])}, got {sorted(doc)}"])
    if kind == "step_ahead":
        return Target(StepAhead(int(doc["k"])), origin_t)
    if kind == "threshold_exceedance":
        return Target(ThresholdExceedance(int(doc["k"]), float(doc["threshold"])), origin_t)
    season = doc["season"]
    if isinstance(season, dict):
        season = Season(str(season["label"]), int(season["start"]), int(season["end"]))
    elif not isinstance(season, str):
        raise ForecastValidationError(["season must be a label or {label,start,end}"])
    cls = PeakIncidence if kind == "peak_incidence" else PeakTiming
    return Target(cls(season), origin_t)


def forecast_to_doc(location: str, target: Target, forecast) -> dict:
    doc = {"location": location, "origin_t": target.origin_t,
           "target": target_to_json(target)}
    if isinstance(forecast, BinnedForecast):
        doc.update(repr="binned", edges=forecast.edges.tolist(), probs=forecast.probs.tolist())
    elif isinstance(forecast, SampleForecast):
        doc.update(repr="samples", samples=forecast.samples.tolist())
    elif isinstance(forecast, PointForecast):
        doc.update(repr="point", value=forecast.value)
    elif isinstance(forecast, IntervalForecast):
        doc.update(repr="interval", alpha=forecast.alpha, lower=forecast.lower,
                   upper=forecast.upper)
    else:
        raise TypeError(f"cannot serialise {type(forecast).__name__}")
    return doc


def forecast_from_doc(doc: dict):
    """Parse one forecast document into ``(location, Target, forecast)``.

    Documents must carry exactly the fields of their declared ``repr``.
    """
    if not isinstance(doc, dict):
        raise ForecastValidationError(["forecast document must be a JSON object"])
    rep = doc.get("repr")
    if rep not in _REPR_FIELDS:
        raise ForecastValidationError([f"unknown repr {rep!r}"])
    expected = set(_COMMON_FIELDS) | set(_REPR_FIELDS[rep])
    unknown, missing = set(doc) - expected, expected - set(doc)
    problems = []
    if unknown:
        problems.append(f"unknown field(s) for repr {rep}: {', '.join(sorted(unknown))}")
    if missing:
        problems.append(f"missing field(s): {', '.join(sorted(missing))}")
    if problems:
        raise ForecastValidationError(problems)
    if not isinstance(doc["location"], str) or isinstance(doc["origin_t"], bool) \
            or not isinstance(doc["origin_t"], int):
        raise ForecastValidationError(["location must be a string and origin_t an integer"])
    target = target_from_json(doc["target"], doc["origin_t"])
    if rep == "binned":
        fc = BinnedForecast(doc["edges"], doc["probs"])
    elif rep == "samples":
        fc = SampleForecast(doc["samples"])
    elif rep == "point":
        fc = PointForecast(doc["value"])
    else:
        fc = IntervalForecast(doc["alpha"], doc["lower"], doc["upper"])
    require_valid(fc)
    return doc["location"], target, fc


def load_forecast_file(path) -> list:
    """Read a file holding one document, a JSON array of documents, or JSON lines."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
        docs = data if isinstance(data, list) else [data]
    except json.JSONDecodeError:
        docs = [json.loads(line) for line in text.splitlines() if line.strip()]
    return [forecast_from_doc(d) for d in docs]
