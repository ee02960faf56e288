"""Forecast evaluation metrics and the Diebold-Mariano comparison test."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .errors import ArgumentError, DegenerateReferenceError, DegenerateVarianceError
from .forecasts import (BinnedForecast, IntervalForecast, PointForecast, SampleForecast,
                        interval_from_density, median_of, mean_of, require_valid)

LOG_SCORE_FLOOR = -10.0


def _paired(a, b, what="forecasts") -> tuple[list, np.ndarray]:
    a = list(a)
    b = np.asarray(b, dtype=float)
    if len(a) != b.size:
        raise ArgumentError(f"{len(a)} {what} but {b.size} truths")
    if not a:
        raise ArgumentError(f"no {what} to score")
    return a, b


def truth_value(realized) -> float:
    """Numeric form of a realized target.

    Booleans map to 0/1 and a tied peak-timing set to its earliest index.
    """
    if isinstance(realized, (bool, np.bool_)):
        return float(realized)
    if isinstance(realized, (set, frozenset)):
        return float(min(realized))
    return float(realized)


# ------------------------------------------------------------- point forecasts

def mae(points: Sequence[PointForecast], truths) -> float:
    points, truths = _paired(points, truths, "point forecasts")
    vals = np.array([p.value for p in points])
    return float(np.mean(np.abs(truths - vals)))


def rmae(abs_errors_a, abs_errors_b) -> float:
    """Summed absolute errors of model A relative to those of reference model B."""
    a = np.abs(np.asarray(abs_errors_a, dtype=float))
    b = np.abs(np.asarray(abs_errors_b, dtype=float))
    if a.shape != b.shape:
        raise ArgumentError(f"error lists differ in length ({a.size} vs {b.size})")
    denom = b.sum()
    if not denom > 0:
        raise DegenerateReferenceError("reference model has zero total absolute error")
    return float(a.sum() / denom)


def describe_rmae(value: float) -> str:
    """Plain-language reading of an rMAE value for reports."""
    pct = round(abs(1.0 - value) * 100, 1)
    pct_text = f"{pct:g}%"
    if value < 1:
        return f"predictions were {pct_text} closer to the observed value than the reference"
    if value > 1:
        return f"predictions were {pct_text} further from the observed value than the reference"
    return "predictions were as close to the observed value as the reference"


# ------------------------------------------------------------- intervals

def _common_alpha(intervals) -> float:
    alphas = {iv.alpha for iv in intervals}
    if len(alphas) != 1:
        raise ArgumentError(f"intervals mix alpha levels {sorted(alphas)}")
    return alphas.pop()


def coverage_rate(intervals: Sequence[IntervalForecast], truths) -> float:
    intervals, truths = _paired(intervals, truths, "intervals")
    _common_alpha(intervals)
    lo = np.array([iv.lower for iv in intervals])
    hi = np.array([iv.upper for iv in intervals])
    return float(np.mean((lo <= truths) & (truths <= hi)))


def interval_score(intervals: Sequence[IntervalForecast], truths) -> float:
    intervals, truths = _paired(intervals, truths, "intervals")
    alpha = _common_alpha(intervals)
    lo = np.array([iv.lower for iv in intervals])
    hi = np.array([iv.upper for iv in intervals])
    below = np.where(truths < lo, lo - truths, 0.0)
    above = np.where(truths > hi, truths - hi, 0.0)
    return float(np.mean((hi - lo) + (2.0 / alpha) * (below + above)))


# ------------------------------------------------------------- densities

def log_score_one(forecast: BinnedForecast, truth: float, floor: float = LOG_SCORE_FLOOR) -> float:
    b = forecast.bin_of(float(truth))
    if b < 0:
        return floor
    mass = forecast.probs[b]
    if mass <= 0:
        return floor
    return max(math.log(mass), floor)


def log_score(forecasts: Sequence[BinnedForecast], truths,
              floor: float = LOG_SCORE_FLOOR) -> float:
    """Mean natural-log mass of the bin holding each truth, each term floored."""
    forecasts, truths = _paired(forecasts, truths)
    return float(np.mean([log_score_one(f, z, floor) for f, z in zip(forecasts, truths)]))


def _segment_sq_integral(g0, g1, length):
    # exact integral of a squared linear function running from g0 to g1
    return length * (g0 * g0 + g0 * g1 + g1 * g1) / 3.0


def _crps_binned(f: BinnedForecast, z: float) -> float:
    e = f.edges
    c = f.cumulative() / f.probs.sum()
    total = 0.0
    if z < e[0]:
        total += e[0] - z
    elif z > e[-1]:
        total += z - e[-1]
    lo, hi = e[:-1], e[1:]
    c0, c1 = c[:-1], c[1:]
    left = hi <= z
    right = lo >= z
    total += float(np.sum(_segment_sq_integral(c0[left], c1[left], (hi - lo)[left])))
    total += float(np.sum(_segment_sq_integral(c0[right] - 1, c1[right] - 1, (hi - lo)[right])))
    for b in np.flatnonzero(~left & ~right):
        cz = c0[b] + (c1[b] - c0[b]) * (z - lo[b]) / (hi[b] - lo[b])
        total += _segment_sq_integral(c0[b], cz, z - lo[b])
        total += _segment_sq_integral(cz - 1, c1[b] - 1, hi[b] - z)
    return total


def _crps_samples(samples: np.ndarray, z: float) -> float:
    xs = np.sort(samples)
    n = xs.size
    term1 = np.mean(np.abs(xs - z))
    # sum over all n^2 ordered pairs |x_i - x_j| == 2 * sum_i (2i - n - 1) x_(i)
    ranks = np.arange(1, n + 1)
    pair_sum = 2.0 * np.dot(2 * ranks - n - 1, xs)
    return float(term1 - 0.5 * pair_sum / (n * n))


def crps(forecast, truth: float) -> float:
    """Continuous ranked probability score, exact for each representation."""
    z = float(truth)
    if isinstance(forecast, PointForecast):
        return abs(forecast.value - z)
    require_valid(forecast)
    if isinstance(forecast, BinnedForecast):
        return _crps_binned(forecast, z)
    if isinstance(forecast, SampleForecast):
        return _crps_samples(forecast.samples, z)
    raise TypeError(f"CRPS undefined for {type(forecast).__name__}")


def crps_skill(crps_model: float, mae_baseline: float) -> float:
    if not mae_baseline > 0:
        raise DegenerateReferenceError("baseline MAE must be positive")
    return float(crps_model / mae_baseline)


# ------------------------------------------------------------- Diebold-Mariano

class DMResult(NamedTuple):
    statistic: float
    p_value: float


def dm_test(loss_a, loss_b, horizon: int = 1) -> DMResult:
    """Diebold-Mariano test of equal expected loss, with the HLN small-sample correction.

    Long-run variance of the loss differential uses a rectangular kernel
    over ``horizon - 1`` autocovariance lags.  Negative statistics favour
    model A.
    """
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ArgumentError("loss series must be 1-d and equally long")
    if a.size < 4:
        raise ArgumentError("need at least 4 paired losses")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ArgumentError("losses must be finite")
    h = int(horizon)
    if h < 1:
        raise ArgumentError("horizon must be >= 1")
    d = a - b
    n = d.size
    dc = d - d.mean()
    gammas = [np.dot(dc[k:], dc[:n - k]) / n for k in range(h)]
    lrv = gammas[0] + 2.0 * sum(gammas[1:])
    if not lrv > 0 or np.all(d == d[0]):
        raise DegenerateVarianceError("loss differential has no variance; test inapplicable")
    stat = d.mean() / math.sqrt(lrv / n)
    stat *= math.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)
    return DMResult(float(stat), float(2.0 * norm.sf(abs(stat))))


# ------------------------------------------------------------- metric registry

@dataclass(frozen=True)
class Metric:
    name: str
    per_case: Callable
    higher_is_better: bool = False

    def loss(self, forecast, truth) -> float:
        """Per-case score oriented so that lower is better."""
        v = self.per_case(forecast, truth)
        return -v if self.higher_is_better else v


def _point(forecast, loss="absolute") -> float:
    if isinstance(forecast, PointForecast):
        return forecast.value
    if isinstance(forecast, IntervalForecast):
        raise ArgumentError("interval forecasts carry no point value")
    require_valid(forecast)
    return mean_of(forecast) if loss == "squared" else median_of(forecast)


def _as_interval(forecast, alpha):
    if isinstance(forecast, IntervalForecast):
        if not math.isclose(forecast.alpha, alpha):
            raise ArgumentError(f"interval has alpha {forecast.alpha}, metric wants {alpha}")
        return forecast
    if isinstance(forecast, (BinnedForecast, SampleForecast)):
        return interval_from_density(forecast, alpha)
    raise ArgumentError(f"cannot derive an interval from {type(forecast).__name__}")


def _log_score_case(forecast, truth):
    if not isinstance(forecast, BinnedForecast):
        raise ArgumentError("log score needs a binned forecast")
    return log_score_one(forecast, truth)


_FIXED = {
    "abs_error": Metric("abs_error", lambda f, z: abs(z - _point(f))),
    "sq_error": Metric("sq_error", lambda f, z: (z - _point(f, "squared")) ** 2),
    "log_abs_error": Metric(
        "log_abs_error",
        lambda f, z: abs(math.log1p(max(z, 0.0)) - math.log1p(max(_point(f), 0.0)))),
    "log_score": Metric("log_score", _log_score_case, higher_is_better=True),
    "crps": Metric("crps", lambda f, z: crps(f, z)),
}
_ALIASES = {"mae": "abs_error", "mse": "sq_error", "log_mae": "log_abs_error"}
_ALPHA_METRIC = re.compile(r"^(interval_score|coverage)_(0?\.\d+)$")


def get_metric(name: str) -> Metric:
    """Look up a metric by name.

    Besides the fixed names, ``interval_score_<alpha>`` and
    ``coverage_<alpha>`` are accepted, e.g. ``interval_score_0.05``.
    """
    key = _ALIASES.get(name, name)
    if key in _FIXED:
        return Metric(name, _FIXED[key].per_case, _FIXED[key].higher_is_better)
    m = _ALPHA_METRIC.match(name)
    if m:
        alpha = float(m.group(2))
        if not 0 < alpha < 1:
            raise ArgumentError(f"alpha {alpha} not in (0, 1)")
        if m.group(1) == "interval_score":
            return Metric(name, lambda f, z: interval_score([_as_interval(f, alpha)], [z]))
        return Metric(name, lambda f, z: coverage_rate([_as_interval(f, alpha)], [z]),
                      higher_is_better=True)
    raise ArgumentError(f"unknown metric {name!r}")


def metric_names() -> list[str]:
    return sorted(_FIXED) + sorted(_ALIASES) + ["interval_score_<alpha>", "coverage_<alpha>"]


# ------------------------------------------------------------- reports

@dataclass(frozen=True)
class CaseKey:
    location: str
    origin_t: int
    target: str


@dataclass
class ScoreReport:
    model_id: str
    metric: str
    per_case: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.per_case)

    @property
    def aggregate(self) -> float:
        if not self.per_case:
            return float("nan")
        # fixed summation order keeps reruns bitwise identical
        return math.fsum(s for _, s in self.per_case) / len(self.per_case)

    def scores(self) -> np.ndarray:
        return np.array([s for _, s in self.per_case])

    def by_location(self) -> dict[str, float]:
        groups: dict[str, list] = {}
        for key, s in self.per_case:
            groups.setdefault(key.location, []).append(s)
        return {loc: math.fsum(v) / len(v) for loc, v in sorted(groups.items())}

    def location_pooled(self) -> float:
        """Unweighted mean of per-location means."""
        per_loc = self.by_location()
        return math.fsum(per_loc.values()) / len(per_loc)


def score_cases(model_id: str, metric, cases) -> ScoreReport:
    """Score ``(CaseKey, forecast, truth)`` triples with one metric."""
    m = get_metric(metric) if isinstance(metric, str) else metric
    report = ScoreReport(model_id, m.name)
    for key, fc, truth in cases:
        report.per_case.append((key, float(m.per_case(fc, truth_value(truth)))))
    return report


def pooled_rmae(report_a: ScoreReport, report_b: ScoreReport) -> float:
    """rMAE over the cases two absolute-error reports have in common."""
    b = dict(report_b.per_case)
    common = [(s, b[k]) for k, s in report_a.per_case if k in b]
    if not common:
        raise ArgumentError("reports share no cases")
    ea, eb = zip(*common)
    return rmae(ea, eb)


SCORE_COLUMNS = ("model", "metric", "location", "origin_t", "target", "score")


def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_score_csv(path, reports, header_comment: Optional[str] = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for r in reports:
            for key, s in r.per_case:
                w.writerow([r.model_id, r.metric, key.location, key.origin_t, key.target, _fmt(s)])
            w.writerow([r.model_id, r.metric, "ALL", "", "aggregate", _fmt(r.aggregate)])


def read_score_csv(path) -> list[ScoreReport]:
    reports: dict[tuple, ScoreReport] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        for row in csv.DictReader(lines):
            key = (row["model"], row["metric"])
            rep = reports.setdefault(key, ScoreReport(*key))
            if row["target"] == "aggregate" and row["location"] == "ALL":
                continue
            rep.per_case.append((CaseKey(row["location"], int(row["origin_t"]), row["target"]),
                                 float(row["score"])))
    return list(reports.values())
