"""Reporting delays: data vintages, completeness profiles and nowcasts of recent counts."""
from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import nbinom

from .errors import (ArgumentError, DataError, DegenerateReferenceError, IndexRangeError,
                     UnidentifiableError)
from .forecasts import BinnedForecast
from .series import TimeSeries


@dataclass
class ReportingTriangle:
    """Case increments keyed by ``(event_t, delay)``.

    ``event_t`` uses the same integer time axis as the incidence CSV; the
    reconstructed series has ``t0`` equal to the first event time.
    """

    location_id: str
    counts: dict = field(default_factory=dict)
    cycle_length: int = 1

    def __post_init__(self):
        for (t, d), c in self.counts.items():
            if d < 0:
                raise ArgumentError(f"negative delay {d} for event {t}")
            if c < 0:
                raise ArgumentError(f"negative increment {c} for event {t}, delay {d}")

    def add(self, event_t: int, delay: int, count) -> None:
        if delay < 0 or count < 0:
            raise ArgumentError("delays and increments must be non-negative")
        key = (int(event_t), int(delay))
        self.counts[key] = self.counts.get(key, 0) + count

    @property
    def event_range(self) -> range:
        times = [t for t, _ in self.counts]
        return range(min(times), max(times) + 1)

    @property
    def max_delay(self) -> int:
        return max(d for _, d in self.counts)

    def finalized(self) -> np.ndarray:
        ev = self.event_range
        out = np.zeros(len(ev))
        for (t, _), c in self.counts.items():
            out[t - ev.start] += c
        return out


def as_of(triangle: ReportingTriangle, report_time: int) -> TimeSeries:
    """Counts per event time as they stood at ``report_time``.

    The series always spans the triangle's full event range so vintages line
    up index by index; events not yet reported show as zero.
    """
    ev = triangle.event_range
    out = np.zeros(len(ev))
    for (t, d), c in triangle.counts.items():
        if t + d <= report_time:
            out[t - ev.start] += c
    return TimeSeries(triangle.location_id, out, triangle.cycle_length, ev.start)


@dataclass(frozen=True)
class CompletenessProfile:
    pi: tuple

    def __post_init__(self):
        pi = tuple(float(p) for p in self.pi)
        if not pi:
            raise ArgumentError("empty completeness profile")
        if any(not 0 <= p <= 1 for p in pi):
            raise ArgumentError("completeness values must lie in [0, 1]")
        if any(b < a for a, b in zip(pi, pi[1:])):
            raise ArgumentError("completeness must be non-decreasing in delay")
        if pi[-1] != 1.0:
            raise ArgumentError("completeness must reach 1 at the last delay")
        object.__setattr__(self, "pi", pi)

    def at(self, delay: int) -> float:
        """Completeness after ``delay`` intervals; 1 beyond the profile."""
        if delay < 0:
            raise ArgumentError("delay must be >= 0")
        return self.pi[delay] if delay < len(self.pi) else 1.0

    def depth_for(self, threshold: float) -> int:
        """Smallest delay whose completeness reaches ``threshold``."""
        return next(d for d, p in enumerate(self.pi) if p >= threshold)


def estimate_completeness(triangle: ReportingTriangle, training_events) -> CompletenessProfile:
    """Cumulative share of cases reported within each delay, pooled over matured events."""
    events = set(training_events)
    D = triangle.max_delay
    by_delay = np.zeros(D + 1)
    for (t, d), c in triangle.counts.items():
        if t in events:
            by_delay[d] += c
    total = by_delay.sum()
    if not total > 0:
        raise DegenerateReferenceError("training events hold no reported cases")
    cum = np.minimum(np.cumsum(by_delay) / total, 1.0)
    cum[-1] = 1.0
    return CompletenessProfile(tuple(cum))


def truncate_incomplete(series: TimeSeries, k: int) -> TimeSeries:
    """Drop the last ``k`` observations, which are too incompletely reported to fit on."""
    n = len(series)
    if k < 0 or k >= n:
        raise IndexRangeError(f"cannot drop {k} of {n} observations")
    if k == 0:
        return series
    return TimeSeries(series.location_id, series.values[:n - k], series.cycle_length, series.t0,
                      None if series.covariates is None
                      else {c: v[:n - k] for c, v in series.covariates.items()},
                      tuple(s for s in series.seasons if s.end <= n - k))


def point_nowcast(partial_count: float, pi_d: float) -> float:
    """Reported count scaled up by the expected completeness."""
    if not pi_d > 0:
        raise UnidentifiableError("completeness 0: nothing has been reported yet")
    if partial_count < 0:
        raise ArgumentError("partial count must be non-negative")
    return partial_count / pi_d


def scale_nowcast(partial_count: float, pi_d: float, edges=None) -> BinnedForecast:
    """Predictive density of the eventual count given ``partial_count`` reported so far.

    Treats the report as ``Binomial(n, pi_d)`` thinning of the true count
    ``n`` with a flat prior on ``n``.  The posterior puts ``n - partial`` on
    a negative binomial with ``partial + 1`` successes and success
    probability ``pi_d``, so its mean is ``(partial + 1) / pi_d - 1``; this
    sits slightly above the point nowcast ``partial / pi_d`` (by
    ``1/pi_d - 1``), the price of the flat prior.

    Without ``edges`` the grid has unit bins centred on ``partial + j``; the
    lowest edge is clipped at 0 so no mass sits below zero.
    """
    point_nowcast(partial_count, pi_d)
    x = float(partial_count)
    if pi_d >= 1.0:
        if edges is None:
            edges = np.array([max(x - 0.5, 0.0), x + 0.5])
        edges = np.asarray(edges, dtype=float)
        probs = np.zeros(edges.size - 1)
        b = int(np.clip(np.searchsorted(edges, x, side="right") - 1, 0, probs.size - 1))
        probs[b] = 1.0
        return BinnedForecast(edges, probs)
    dist = nbinom(x + 1.0, pi_d)
    upper = int(dist.ppf(1 - 1e-12)) + 1
    extra = np.arange(upper + 1)
    pmf = dist.pmf(extra)
    values = x + extra
    if edges is None:
        edges = np.concatenate(([max(x - 0.5, 0.0)], values + 0.5))
        probs = pmf
    else:
        edges = np.asarray(edges, dtype=float)
        idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, edges.size - 2)
        probs = np.bincount(idx, weights=pmf, minlength=edges.size - 1)
    return BinnedForecast(edges, probs / probs.sum())


def nowcast_series(snapshot: TimeSeries, report_time: int,
                   profile: CompletenessProfile) -> TimeSeries:
    """Point-nowcast every event in a snapshot from its delay at ``report_time``."""
    vals = np.array(snapshot.values, dtype=float)
    for i in range(vals.size):
        delay = report_time - (snapshot.t0 + i)
        if delay < 0:
            continue
        vals[i] = point_nowcast(vals[i], profile.at(delay)) if profile.at(delay) > 0 else vals[i]
    return snapshot.replace_values(vals)


# ------------------------------------------------------------- vintage storage

VINTAGE_COLUMNS = ("location", "event_time", "report_time", "count_delta")


def check_vintage_csv(path) -> tuple[list, list]:
    rows, problems = [], []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        return [], [(0, f"cannot open {path}: {exc}")]
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in VINTAGE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            return [], [(1, f"missing column(s): {', '.join(missing)}")]
        for lineno, row in enumerate(reader, start=2):
            try:
                ev, rep = int(row["event_time"]), int(row["report_time"])
                delta = float(row["count_delta"])
            except (TypeError, ValueError):
                problems.append((lineno, "event_time/report_time must be integers, count_delta numeric"))
                continue
            if rep < ev:
                problems.append((lineno, f"report_time {rep} precedes event_time {ev}"))
            elif delta < 0 or not math.isfinite(delta):
                problems.append((lineno, f"count_delta {delta} must be finite and non-negative"))
            else:
                rows.append((row["location"].strip(), ev, rep, delta))
    return rows, problems


def read_vintage_csv(path, cycle_length: int = 1) -> dict[str, ReportingTriangle]:
    rows, problems = check_vintage_csv(path)
    if problems:
        raise DataError(problems)
    out: dict[str, ReportingTriangle] = {}
    for loc, ev, rep, delta in rows:
        tri = out.setdefault(loc, ReportingTriangle(loc, {}, cycle_length))
        tri.add(ev, rep - ev, delta)
    return out


class VintageJournal:
    """Append-only JSON-lines store of count increments.

    Each location's report times must be non-decreasing across appends.
    Appends are serialised by a lock; reads build an independent triangle.
    """

    def __init__(self, path, cycle_length: int = 1):
        self.path = Path(path)
        self.cycle_length = cycle_length
        self._lock = threading.Lock()
        self._last_report: dict[str, int] = {}
        if self.path.exists():
            for rec in self._records():
                self._last_report[rec["location"]] = max(
                    self._last_report.get(rec["location"], rec["report_time"]), rec["report_time"])

    def _records(self):
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)

    def append(self, location: str, event_time: int, report_time: int, count_delta) -> None:
        if report_time < event_time:
            raise ArgumentError("report_time must not precede event_time")
        if count_delta < 0:
            raise ArgumentError("downward revisions are not accepted")
        with self._lock:
            last = self._last_report.get(location)
            if last is not None and report_time < last:
                raise ArgumentError(
                    f"report_time {report_time} for {location} is earlier than journaled {last}")
            rec = {"location": location, "event_time": int(event_time),
                   "report_time": int(report_time), "count_delta": count_delta}
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._last_report[location] = report_time

    def triangles(self, as_of_report: Optional[int] = None) -> dict[str, ReportingTriangle]:
        out: dict[str, ReportingTriangle] = {}
        if not self.path.exists():
            return out
        for rec in self._records():
            if as_of_report is not None and rec["report_time"] > as_of_report:
                continue
            tri = out.setdefault(rec["location"], ReportingTriangle(rec["location"], {}, self.cycle_length))
            tri.add(rec["event_time"], rec["report_time"] - rec["event_time"], rec["count_delta"])
        return out
