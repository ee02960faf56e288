"""Surveillance time series, seasons and forecast targets.

Time indices are 1-based and local to a series: index ``t`` refers to
``values[t - 1]``.  ``t0`` is the epoch of index 1 and only matters for
working out where in the seasonal cycle an observation falls.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from .errors import DataError, IndexRangeError, SeasonLookupError


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Season:
    label: str
    start: int
    end: int

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"season {self.label!r} is empty ({self.start}..{self.end})")

    @property
    def indices(self) -> range:
        return range(self.start, self.end + 1)

    def __len__(self):
        return self.end - self.start + 1

    def check_within(self, n: int) -> None:
        if self.start < 1 or self.end > n:
            raise IndexRangeError(
                f"season {self.label!r} spans {self.start}..{self.end}, series has 1..{n}"
            )


@dataclass(frozen=True, eq=False)
class TimeSeries:
    location_id: str
    values: np.ndarray
    cycle_length: int = 1
    t0: int = 1
    covariates: Optional[Mapping[str, np.ndarray]] = None
    seasons: tuple = ()

    def __post_init__(self):
        vals = _frozen_array(self.values)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("a series needs at least one observation")
        if not np.all(np.isfinite(vals)):
            raise ValueError("series values must be finite")
        if np.any(vals < 0):
            raise ValueError("series values must be non-negative")
        if int(self.cycle_length) < 1:
            raise ValueError("cycle_length must be >= 1")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "cycle_length", int(self.cycle_length))
        if self.covariates is not None:
            cov = {}
            for name, col in self.covariates.items():
                col = _frozen_array(col)
                if col.shape != vals.shape:
                    raise ValueError(f"covariate {name!r} has {col.size} rows, expected {vals.size}")
                cov[name] = col
            object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "seasons", tuple(self.seasons))

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        if (self.location_id, self.t0, self.cycle_length, self.seasons) != (
            other.location_id, other.t0, other.cycle_length, other.seasons
        ):
            return False
        if not np.array_equal(self.values, other.values):
            return False
        mine, theirs = self.covariates or {}, other.covariates or {}
        return mine.keys() == theirs.keys() and all(
            np.array_equal(mine[k], theirs[k]) for k in mine
        )

    __hash__ = None

    def at(self, t: int) -> float:
        """Observed value at 1-based index ``t``."""
        if not 1 <= t <= len(self):
            raise IndexRangeError(f"time index {t} is outside 1..{len(self)}")
        return float(self.values[t - 1])

    def season(self, label: str) -> Season:
        for s in self.seasons:
            if s.label == label:
                return s
        raise SeasonLookupError(f"unknown season label {label!r}")

    def replace_values(self, values) -> "TimeSeries":
        return TimeSeries(self.location_id, values, self.cycle_length, self.t0,
                          self.covariates, self.seasons)


def whole_series(series: TimeSeries, label: str = "all") -> Season:
    return Season(label, 1, len(series))


# ---------------------------------------------------------------- targets

@dataclass(frozen=True)
class StepAhead:
    k: int


@dataclass(frozen=True)
class PeakIncidence:
    season: Union[Season, str]


@dataclass(frozen=True)
class PeakTiming:
    season: Union[Season, str]


@dataclass(frozen=True)
class ThresholdExceedance:
    k: int
    threshold: float

    def __post_init__(self):
        if not self.threshold >= 0:
            raise ValueError("threshold must be non-negative")


TargetKind = Union[StepAhead, PeakIncidence, PeakTiming, ThresholdExceedance]


@dataclass(frozen=True)
class Target:
    kind: TargetKind
    origin_t: int

    def describe(self) -> str:
        kind = self.kind
        if isinstance(kind, StepAhead):
            return f"step_ahead[k={kind.k}]"
        if isinstance(kind, ThresholdExceedance):
            return f"exceeds[k={kind.k},C={kind.threshold:g}]"
        label = kind.season if isinstance(kind.season, str) else kind.season.label
        name = "peak_incidence" if isinstance(kind, PeakIncidence) else "peak_timing"
        return f"{name}[{label}]"

    @property
    def index(self) -> Optional[int]:
        """Absolute index of point targets, ``None`` for seasonal ones."""
        if isinstance(self.kind, (StepAhead, ThresholdExceedance)):
            return self.origin_t + self.kind.k
        return None


def resolve_season(series: TimeSeries, season: Union[Season, str]) -> Season:
    if isinstance(season, str):
        season = series.season(season)
    season.check_within(len(series))
    return season


def realized_target(series: TimeSeries, target: Target):
    """Value the target actually took in ``series``.

    Returns a float for step-ahead and peak-incidence targets, a frozenset
    of indices for peak timing (every tied maximum is included), and a bool
    for threshold exceedance.
    """
    kind = target.kind
    if isinstance(kind, StepAhead):
        return series.at(target.origin_t + kind.k)
    if isinstance(kind, ThresholdExceedance):
        return series.at(target.origin_t + kind.k) > kind.threshold
    season = resolve_season(series, kind.season)
    window = series.values[season.start - 1:season.end]
    peak = float(window.max())
    if isinstance(kind, PeakIncidence):
        return peak
    return frozenset(int(i) + season.start for i in np.flatnonzero(window == peak))


def train_view(series: TimeSeries, through_t: int) -> TimeSeries:
    """Prefix ``y_1..y_through_t`` of a series, metadata kept."""
    n = len(series)
    if not 1 <= through_t <= n:
        raise IndexRangeError(f"through_t={through_t} is outside 1..{n}")
    if through_t == n:
        return series
    cov = None
    if series.covariates is not None:
        cov = {k: v[:through_t] for k, v in series.covariates.items()}
    seasons = tuple(s for s in series.seasons if s.end <= through_t)
    return TimeSeries(series.location_id, series.values[:through_t], series.cycle_length,
                      series.t0, cov, seasons)


def season_index(series: TimeSeries, t: int) -> int:
    """Position of index ``t`` within the seasonal cycle, in ``1..L``."""
    if t < 1:
        raise IndexRangeError(f"time index {t} must be >= 1")
    return (series.t0 + t - 2) % series.cycle_length + 1


# ---------------------------------------------------------------- CSV I/O

REQUIRED_COLUMNS = ("location", "time_index", "value")


def check_incidence_csv(path) -> tuple[dict, list]:
    """Parse an incidence CSV, collecting problems instead of stopping at the first.

    Returns ``(rows_by_location, problems)`` where ``problems`` is a list of
    ``(line_number, message)``.
    """
    problems = []
    by_loc: dict[str, list] = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        return {}, [(0, f"cannot open {path}: {exc}")]
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            return {}, [(1, f"missing column(s): {', '.join(missing)}")]
        extra = [c for c in header if c not in REQUIRED_COLUMNS and c != "season"
                 and not c.startswith("x_")]
        if extra:
            problems.append((1, f"unexpected column(s): {', '.join(extra)}"))
        cov_cols = [c for c in header if c.startswith("x_")]
        for lineno, row in enumerate(reader, start=2):
            loc = (row.get("location") or "").strip()
            if not loc:
                problems.append((lineno, "empty location"))
                continue
            try:
                t = int(row["time_index"])
            except (TypeError, ValueError):
                problems.append((lineno, f"time_index {row['time_index']!r} is not an integer"))
                continue
            try:
                v = float(row["value"])
            except (TypeError, ValueError):
                problems.append((lineno, f"value {row['value']!r} is not a number"))
                continue
            if not math.isfinite(v):
                problems.append((lineno, f"value {v} is not finite"))
                continue
            if v < 0:
                problems.append((lineno, f"negative value {v}"))
                continue
            covs = {}
            for c in cov_cols:
                try:
                    covs[c] = float(row[c])
                except (TypeError, ValueError):
                    problems.append((lineno, f"covariate {c}={row[c]!r} is not a number"))
            by_loc.setdefault(loc, []).append((lineno, t, v, (row.get("season") or "").strip(), covs))
    for loc, rows in by_loc.items():
        rows.sort(key=lambda r: r[1])
        for prev, cur in zip(rows, rows[1:]):
            if cur[1] == prev[1]:
                problems.append((cur[0], f"duplicate time_index {cur[1]} for {loc}"))
            elif cur[1] != prev[1] + 1:
                problems.append((cur[0], f"gap in time_index for {loc}: {prev[1]} -> {cur[1]}"))
        seen, last = set(), None
        for lineno, _, _, label, _ in rows:
            if label and label != last and label in seen:
                problems.append((lineno, f"season {label!r} is not contiguous for {loc}"))
            if label:
                seen.add(label)
            last = label
    return by_loc, problems


def read_incidence_csv(path, cycle_length: int) -> dict[str, TimeSeries]:
    rows_by_loc, problems = check_incidence_csv(path)
    if problems:
        raise DataError(problems)
    if not rows_by_loc:
        raise DataError([(0, f"{path} has no data rows")])
    out = {}
    for loc in sorted(rows_by_loc):
        rows = rows_by_loc[loc]
        values = [r[2] for r in rows]
        cov_names = sorted(rows[0][4])
        cov = {c: [r[4][c] for r in rows] for c in cov_names} or None
        seasons, start = [], None
        for i, r in enumerate(rows, start=1):
            label = r[3]
            if start is None or label != rows[start - 1][3]:
                if start is not None and rows[start - 1][3]:
                    seasons.append(Season(rows[start - 1][3], start, i - 1))
                start = i
        if rows[start - 1][3]:
            seasons.append(Season(rows[start - 1][3], start, len(rows)))
        out[loc] = TimeSeries(loc, values, cycle_length, rows[0][1], cov, tuple(seasons))
    return out


def write_incidence_csv(path, series_list, season_labels: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        cov_names = sorted(series_list[0].covariates or {}) if series_list else []
        w = csv.writer(fh, lineterminator="\n")
        header = ["location", "time_index", "value"]
        if season_labels:
            header.append("season")
        w.writerow(header + cov_names)
        for s in series_list:
            labels = {}
            for season in s.seasons:
                for i in season.indices:
                    labels[i] = season.label
            for i, v in enumerate(s.values, start=1):
                row = [s.location_id, s.t0 + i - 1, repr(float(v))]
                if season_labels:
                    row.append(labels.get(i, ""))
                row += [repr(float(s.covariates[c][i - 1])) for c in cov_names]
                w.writerow(row)
