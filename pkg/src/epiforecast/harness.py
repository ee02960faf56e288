"""Train / cross-validate / test workflow.

Every scored case is a step-ahead target at a season index ``j``.  In the
default ``rolling`` origin mode the forecast is issued at ``j - horizon``
and conditions on data through that origin (minus ``lag`` observations
dropped as too incomplete).  In ``season_start`` mode every target of a
season is forecast from the last index before the season starts.

Cross-validation leaves one training season out of the *fit*; conditioning
data for its forecasts still come from the observed series.  The test
phase refits on everything strictly before each test season, scores it,
then rolls forward.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import models
from .ensemble import combine, train_weights
from .errors import ArgumentError, EpiForecastError, IndexRangeError
from .forecasts import BinnedForecast
from .models import ForecasterSpec
from .nowcast import CompletenessProfile, ReportingTriangle, as_of, nowcast_series
from .scoring import CaseKey, ScoreReport, get_metric, pooled_rmae, rmae, score_cases
from .series import Season, StepAhead, Target, TimeSeries, train_view

log = logging.getLogger(__name__)

DEFAULT_CV_METRIC = "log_abs_error"


@dataclass(frozen=True)
class SplitSpec:
    training_seasons: tuple
    testing_seasons: tuple = ()

    def __post_init__(self):
        train = tuple(sorted(self.training_seasons, key=lambda s: s.start))
        test = tuple(sorted(self.testing_seasons, key=lambda s: s.start))
        object.__setattr__(self, "training_seasons", train)
        object.__setattr__(self, "testing_seasons", test)
        allseas = train + test
        labels = [s.label for s in allseas]
        if len(set(labels)) != len(labels):
            raise ArgumentError("season labels must be unique across the split")
        ordered = sorted(allseas, key=lambda s: s.start)
        for a, b in zip(ordered, ordered[1:]):
            if b.start <= a.end:
                raise ArgumentError(f"seasons {a.label!r} and {b.label!r} overlap")
        if train and test and test[0].start <= train[-1].end:
            raise ArgumentError("testing seasons must all come after the training seasons")

    @property
    def training_end(self) -> int:
        return self.training_seasons[-1].end

    def check_against(self, data: Sequence[TimeSeries]) -> None:
        for s in data:
            for season in self.training_seasons + self.testing_seasons:
                season.check_within(len(s))


@dataclass
class History:
    """What a forecaster may condition on when issuing a forecast at ``origin``.

    Without vintages this is the observed prefix.  With reporting triangles
    it is the snapshot as reported at ``origin``, optionally scaled up by a
    completeness profile.  ``lag`` trailing observations are always dropped.
    """

    lag: int = 0
    triangles: Optional[dict] = None
    profile: Optional[CompletenessProfile] = None

    def __call__(self, series: TimeSeries, origin: int) -> TimeSeries:
        through = origin - self.lag
        if through < 1:
            raise IndexRangeError(f"no data left through origin {origin} after dropping {self.lag}")
        if self.triangles is None:
            return train_view(series, through)
        tri: ReportingTriangle = self.triangles[series.location_id]
        report_time = series.t0 + origin - 1
        snap = as_of(tri, report_time)
        if self.profile is not None:
            snap = nowcast_series(snap, report_time, self.profile)
        offset = series.t0 - snap.t0
        vals = snap.values[offset:offset + through]
        if offset < 0 or vals.size < through:
            raise IndexRangeError(f"vintages for {series.location_id} do not cover 1..{through}")
        return TimeSeries(series.location_id, vals, series.cycle_length, series.t0)


@dataclass(frozen=True)
class AuditRecord:
    phase: str
    model_id: str
    location: str
    season: str
    season_start: int
    action: str
    visible_through: int
    origin: Optional[int] = None
    target_index: Optional[int] = None


@dataclass
class Case:
    key: CaseKey
    season: str
    forecast: BinnedForecast
    truth: float


@dataclass
class FoldOutcome:
    season: str
    cases: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    error: Optional[str] = None
    fit_through: int = 0


@dataclass
class CVResult:
    model_id: str
    size: int
    metric: str
    fold_scores: list
    cv_error: float
    cv_se: float
    cv_sd: float
    failed: list = field(default_factory=list)
    cases: list = field(default_factory=list)
    train_mse: float = float("nan")
    train_metric: float = float("nan")


@dataclass
class ModelTest:
    model_id: str
    size: int
    cases: list
    refits: list
    failed: list
    audit: list


@dataclass
class TestResult:
    models: dict
    reports: list
    rmae_pooled: dict = field(default_factory=dict)
    rmae_location_mean: dict = field(default_factory=dict)
    baseline_id: Optional[str] = None

    @property
    def audit(self) -> list:
        return [r for m in self.models.values() for r in m.audit]

    def report(self, model_id: str, metric: str) -> ScoreReport:
        for r in self.reports:
            if r.model_id == model_id and r.metric == metric:
                return r
        raise KeyError((model_id, metric))

    def add_rmae(self, model_id: str, cases) -> None:
        """Record rMAE of ``cases`` against the baseline, on shared case keys."""
        base = _abs_report(self.baseline_id, self.models[self.baseline_id].cases)
        mine = _abs_report(model_id, cases)
        try:
            self.rmae_pooled[model_id] = pooled_rmae(mine, base)
            self.rmae_location_mean[model_id] = _rmae_by_location(mine, base)
        except EpiForecastError as exc:
            log.warning("rMAE for %s unavailable: %s", model_id, exc)


def _origins(season: Season, horizon: int, origin_mode: str):
    for j in season.indices:
        if origin_mode == "rolling":
            yield j - horizon, j
        elif origin_mode == "season_start":
            yield season.start - 1, j
        else:
            raise ArgumentError(f"unknown origin mode {origin_mode!r}")


def _warmup_for(spec: ForecasterSpec, data, warmup):
    if warmup is not None:
        return max(int(warmup), 1)
    fam = models.family_for(spec.family)
    return max(1, max(fam.min_history(spec, s.cycle_length) for s in data))


def _forecast_season(spec, fit_result, series, season, history: History, horizon, origin_mode,
                     warmup, phase, audit):
    cases = []
    for origin, j in _origins(season, horizon, origin_mode):
        if origin - history.lag < warmup:
            continue
        hist = history(series, origin)
        target = Target(StepAhead(j - origin), origin)
        fc = models.forecast(spec, fit_result, hist, [target])[0]
        audit.append(AuditRecord(phase, spec.model_id, series.location_id, season.label,
                                 season.start, "forecast", len(hist), origin, j))
        cases.append(Case(CaseKey(series.location_id, origin, target.describe()),
                          season.label, fc, series.at(j)))
    return cases


def _cv_fold(args):
    spec, data, split, season, mode, history, horizon, origin_mode, warmup = args
    out = FoldOutcome(season.label)
    try:
        for series in data:
            if mode == "loyo":
                train = train_view(series, split.training_end)
                holdout = frozenset(season.indices)
            else:
                train = history(series, season.start - 1)
                holdout = frozenset()
            fit_result = models.fit(spec, train, holdout)
            out.audit.append(AuditRecord("cv", spec.model_id, series.location_id, season.label,
                                         season.start, "fit", len(train)))
            out.cases += _forecast_season(spec, fit_result, series, season, history, horizon,
                                          origin_mode, warmup, "cv", out.audit)
        if not out.cases:
            out.error = "no scorable cases in this season"
    except EpiForecastError as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        out.cases = []
    return out


def _run(fn, items, jobs: int):
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def loyo_cv(model: ForecasterSpec, data: Sequence[TimeSeries], split: SplitSpec,
            metric: str = DEFAULT_CV_METRIC, *, horizon: int = 1, origin_mode: str = "rolling",
            history: Optional[History] = None, warmup: Optional[int] = None,
            mode: str = "loyo", jobs: int = 1) -> CVResult:
    """Cross-validate one model over the training seasons.

    ``mode="loyo"`` fits each fold on all other training seasons (including
    later ones); ``mode="prospective"`` fits only on data before the fold.
    """
    if len(split.training_seasons) < 2:
        raise ArgumentError("cross-validation needs at least two training seasons")
    if mode not in ("loyo", "prospective"):
        raise ArgumentError(f"unknown CV mode {mode!r}")
    data = list(data)
    split.check_against(data)
    history = history or History()
    warm = _warmup_for(model, data, warmup)
    m = get_metric(metric)
    jobs_args = [(model, data, split, s, mode, history, horizon, origin_mode, warm)
                 for s in split.training_seasons]
    outcomes = _run(_cv_fold, jobs_args, jobs)

    fold_scores, failed, cases = [], [], []
    for out in outcomes:
        if out.error:
            failed.append((out.season, out.error))
            continue
        losses = [m.loss(c.forecast, c.truth) for c in out.cases]
        fold_scores.append((out.season, math.fsum(losses) / len(losses)))
        cases += out.cases
    if failed:
        log.warning("%s: %d of %d folds failed: %s", model.model_id, len(failed),
                    len(outcomes), "; ".join(f"{s}: {e}" for s, e in failed))
    scores = np.array([s for _, s in fold_scores])
    if scores.size:
        cv_error = math.fsum(scores) / scores.size
        sd = float(np.std(scores, ddof=1)) if scores.size > 1 else 0.0
    else:
        cv_error, sd = float("nan"), float("nan")
    se = sd / math.sqrt(scores.size) if scores.size else float("nan")
    result = CVResult(model.model_id, model.size, m.name, fold_scores, cv_error, se, sd,
                      failed, cases)
    _in_sample(result, model, data, split, history, horizon, origin_mode, warm, m)
    return result


def _in_sample(result, spec, data, split, history, horizon, origin_mode, warm, metric):
    """Training-phase error: fit once on all training seasons and score on them."""
    sse, n, losses = 0.0, 0, []
    try:
        for series in data:
            train = train_view(series, split.training_end)
            fit_result = models.fit(spec, train)
            sse += fit_result.training_loss
            n += fit_result.n_obs
            for season in split.training_seasons:
                for c in _forecast_season(spec, fit_result, series, season, history, horizon,
                                          origin_mode, warm, "train", []):
                    losses.append(metric.loss(c.forecast, c.truth))
    except EpiForecastError as exc:
        log.warning("%s: in-sample fit failed: %s", spec.model_id, exc)
        return
    result.train_mse = sse / n if n else float("nan")
    result.train_metric = math.fsum(losses) / len(losses) if losses else float("nan")


def select_models(results: Sequence[CVResult], band: str = "se") -> tuple[str, str]:
    """Best model by CV error and the smallest model within one band of it.

    ``band`` is ``"se"`` (standard error of the best model's fold scores)
    or ``"sd"`` (their standard deviation).
    """
    usable = [r for r in results if math.isfinite(r.cv_error)]
    if not usable:
        raise ArgumentError("no model has a finite CV error")
    best = min(usable, key=lambda r: (r.cv_error, r.size, r.model_id))
    width = best.cv_se if band == "se" else best.cv_sd
    if band not in ("se", "sd"):
        raise ArgumentError(f"unknown band {band!r}")
    if not math.isfinite(width):
        width = 0.0
    limit = best.cv_error + width
    pars = min((r for r in usable if r.cv_error <= limit),
               key=lambda r: (r.size, r.cv_error, r.model_id))
    return best.model_id, pars.model_id


def _test_model(args):
    spec, data, split, history, horizon, origin_mode, warm = args
    cases, refits, failed, audit = [], [], [], []
    for season in split.testing_seasons:
        season_cases = []
        try:
            for series in data:
                train = history(series, season.start - 1)
                fit_result = models.fit(spec, train)
                audit.append(AuditRecord("test", spec.model_id, series.location_id, season.label,
                                         season.start, "fit", len(train)))
                season_cases += _forecast_season(spec, fit_result, series, season, history,
                                                 horizon, origin_mode, warm, "test", audit)
        except EpiForecastError as exc:
            failed.append((season.label, f"{type(exc).__name__}: {exc}"))
            continue
        refits.append((season.label, season.start - 1 - history.lag))
        cases += season_cases
    return ModelTest(spec.model_id, spec.size, cases, refits, failed, audit)


def rolling_origin_test(model_specs: Sequence[ForecasterSpec], data: Sequence[TimeSeries],
                        split: SplitSpec, metrics=("abs_error",), *, horizon: int = 1,
                        origin_mode: str = "rolling", history: Optional[History] = None,
                        warmup: Optional[int] = None,
                        baseline: Optional[ForecasterSpec] = None, jobs: int = 1) -> TestResult:
    """Prospective evaluation over the testing seasons, refitting once per season.

    When ``baseline`` is given it is run too, and every model's rMAE
    against it is reported (pooled over all cases and as a mean of
    per-location ratios).
    """
    if not split.testing_seasons:
        raise ArgumentError("no testing seasons")
    data = list(data)
    split.check_against(data)
    history = history or History()
    specs = list(model_specs)
    if baseline is not None and all(s.model_id != baseline.model_id for s in specs):
        specs.append(baseline)
    warm = max(_warmup_for(s, data, warmup) for s in specs)
    outs = _run(_test_model, [(s, data, split, history, horizon, origin_mode, warm) for s in specs],
                jobs)
    result = TestResult({o.model_id: o for o in outs}, [],
                        baseline_id=baseline.model_id if baseline else None)
    for o in outs:
        for s, e in o.failed:
            log.warning("%s: test season %s skipped: %s", o.model_id, s, e)
        triples = [(c.key, c.forecast, c.truth) for c in o.cases]
        for metric in metrics:
            result.reports.append(score_cases(o.model_id, metric, triples))
    if baseline is not None:
        for o in outs:
            if o.model_id != baseline.model_id and o.cases:
                result.add_rmae(o.model_id, o.cases)
    return result


def _abs_report(model_id: str, cases) -> ScoreReport:
    return score_cases(model_id, "abs_error", [(c.key, c.forecast, c.truth) for c in cases])


def _rmae_by_location(mine: ScoreReport, base: ScoreReport) -> float:
    b = dict(base.per_case)
    per_loc: dict[str, tuple] = {}
    for key, s in mine.per_case:
        if key in b:
            a_list, b_list = per_loc.setdefault(key.location, ([], []))
            a_list.append(s)
            b_list.append(b[key])
    ratios = [rmae(a, bb) for a, bb in per_loc.values()]
    return math.fsum(ratios) / len(ratios)


def audit_violations(records: Sequence[AuditRecord], origin_mode: str = "rolling") -> list[str]:
    """Test-phase records that saw data they should not have."""
    bad = []
    for r in records:
        if r.phase != "test":
            continue
        if r.action == "fit" and r.visible_through >= r.season_start:
            bad.append(f"{r.model_id}/{r.location}/{r.season}: fit saw index {r.visible_through}")
        if r.action == "forecast":
            if r.visible_through > r.origin or r.visible_through >= r.target_index:
                bad.append(f"{r.model_id}/{r.location}/{r.season}: forecast of {r.target_index} "
                           f"saw index {r.visible_through}")
            if origin_mode == "season_start" and r.visible_through >= r.season_start:
                bad.append(f"{r.model_id}/{r.location}/{r.season}: forecast saw season data")
    return bad


# ------------------------------------------------------------- ensembles

def _aligned(case_lists):
    """Cases present for every component, in the first component's order."""
    maps = [{c.key: c for c in cl} for cl in case_lists]
    keys = [c.key for c in case_lists[0] if all(c.key in m for m in maps[1:])]
    return keys, maps


def fit_ensemble_weights(cv_results: Sequence[CVResult]):
    """Train linear-pool weights on the components' out-of-sample CV forecasts."""
    keys, maps = _aligned([r.cases for r in cv_results])
    if not keys:
        raise ArgumentError("components share no cross-validation cases")
    comps = [[m[k].forecast for m in maps] for k in keys]
    truths = [maps[0][k].truth for k in keys]
    return train_weights(comps, truths)


def ensemble_cases(component_tests: Sequence[ModelTest], weights) -> list[Case]:
    keys, maps = _aligned([t.cases for t in component_tests])
    return [Case(k, maps[0][k].season, combine([m[k].forecast for m in maps], weights),
                 maps[0][k].truth) for k in keys]
