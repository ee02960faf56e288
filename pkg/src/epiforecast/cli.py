"""Batch command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config, sha256_file
from .ensemble import EnsembleSpec
from .errors import ConfigError, DataError, EpiForecastError, ForecastValidationError
from .forecasts import load_forecast_file
from .harness import (CVResult, History, TestResult, ensemble_cases, fit_ensemble_weights,
                      loyo_cv, rolling_origin_test, select_models, SplitSpec)
from .models import ForecasterSpec, family_for
from .nowcast import (CompletenessProfile, ReportingTriangle, check_vintage_csv,
                      estimate_completeness, read_vintage_csv)
from .scoring import CaseKey, get_metric, read_score_csv, score_cases, write_score_csv
from .series import check_incidence_csv, read_incidence_csv, realized_target, write_incidence_csv
from .synthetic import seasonal_ar_data

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("epiforecast")


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage


# ------------------------------------------------------------- validate

def cmd_validate(paths) -> tuple[int, dict]:
    files = []
    for p in paths:
        try:
            with open(p, encoding="utf-8") as fh:
                header = fh.readline()
        except OSError as exc:
            files.append({"path": str(p), "kind": "unknown",
                          "problems": [{"line": 0, "message": str(exc)}]})
            continue
        if "count_delta" in header:
            kind, (_, problems) = "vintage", check_vintage_csv(p)
        else:
            kind, (_, problems) = "incidence", check_incidence_csv(p)
        files.append({"path": str(p), "kind": kind,
                      "problems": [{"line": ln, "message": msg} for ln, msg in problems]})
    ok = all(not f["problems"] for f in files)
    return (EXIT_OK if ok else EXIT_DATA), {"ok": ok, "files": files}


# ------------------------------------------------------------- run

def load_run_data(cfg: RunConfig):
    """Series, split and conditioning policy for a run."""
    series = list(read_incidence_csv(cfg.incidence, cfg.cycle_length).values())
    first = series[0]
    seasons = {}
    for label in cfg.training + cfg.testing:
        try:
            seasons[label] = first.season(label)
        except KeyError:
            raise DataError([(0, f"season {label!r} not found for location {first.location_id}")])
    for s in series[1:]:
        for label, season in seasons.items():
            if label not in {x.label for x in s.seasons} or s.season(label) != season:
                raise DataError([(0, f"season {label!r} differs between {first.location_id} "
                                     f"and {s.location_id}")])
    split = SplitSpec(tuple(seasons[l] for l in cfg.training), tuple(seasons[l] for l in cfg.testing))
    history = History(lag=cfg.nowcast_k)
    if cfg.vintages is not None:
        triangles = read_vintage_csv(cfg.vintages, cfg.cycle_length)
        missing = [s.location_id for s in series if s.location_id not in triangles]
        if missing:
            raise DataError([(0, f"no vintages for location(s) {', '.join(missing)}")])
        profile = None
        if cfg.nowcast_profile == "estimate":
            profile = _pooled_profile(triangles, series, split.training_end)
        elif cfg.nowcast_profile is not None:
            profile = CompletenessProfile(tuple(cfg.nowcast_profile))
        history = History(cfg.nowcast_k, triangles, profile)
    return series, split, history


def _pooled_profile(triangles, series, training_end) -> CompletenessProfile:
    pooled = ReportingTriangle("pooled")
    matured = set()
    for s in series:
        tri = triangles[s.location_id]
        end_time = s.t0 + training_end - 1
        for (t, d), c in tri.counts.items():
            pooled.add(t, d, c)
        matured |= {(t) for t in tri.event_range if t + tri.max_delay <= end_time}
    return estimate_completeness(pooled, sorted(matured))


def _staged(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, DataError):
        raise
    except Exception as exc:  # noqa: BLE001 - any failure is reported with its stage
        raise StageError(stage, exc) from exc


def _comment(cfg: RunConfig) -> str:
    return f"config_sha256={cfg.sha256}"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, header, rows, comment: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else _fmt(float(x))


CV_SUMMARY_COLUMNS = ("model", "size", "cv_error", "cv_se", "cv_sd", "n_folds", "n_failed",
                      "train_mse", "train_error")


def write_cv_outputs(out: Path, cfg: RunConfig, results: list[CVResult]) -> None:
    rows = []
    for r in results:
        for label, score in r.fold_scores:
            rows.append([r.model_id, label, "ok", _num(score), ""])
        for label, msg in r.failed:
            rows.append([r.model_id, label, "failed", "", msg])
    _write_rows(out / "cv_table.csv", ("model", "fold", "status", "score", "message"), rows,
                _comment(cfg))
    summary = [[r.model_id, r.size, _num(r.cv_error), _num(r.cv_se), _num(r.cv_sd),
                len(r.fold_scores), len(r.failed), _num(r.train_mse), _num(r.train_metric)]
               for r in results]
    _write_rows(out / "cv_summary.csv", CV_SUMMARY_COLUMNS, summary, _comment(cfg))


def plot_error_by_size(cv_summary_path, test_scores_path, metric: str) -> list[list]:
    """Training, CV and test error per model, ordered by size.

    Recomputed from the two CSV artifacts alone so the plot data can always
    be regenerated from the scores.
    """
    with open(cv_summary_path, newline="", encoding="utf-8") as fh:
        summary = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    tests = {r.model_id: r.aggregate for r in read_score_csv(test_scores_path) if r.metric == metric}
    rows = []
    for s in summary:
        test = tests.get(s["model"])
        rows.append([s["model"], int(s["size"]), s["train_error"], s["cv_error"],
                     "" if test is None else _fmt(test)])
    rows.sort(key=lambda r: (r[1], r[0]))
    return rows


def cmd_run(cfg: RunConfig, jobs: int = 1) -> dict:
    """Full experiment; returns the run manifest it also writes to disk."""
    series, split, history = _staged("load", load_run_data, cfg)
    specs = cfg.specs()
    warmup = cfg.warmup
    if warmup is None:
        warmup = max(1, max(family_for(s.family).min_history(s, cfg.cycle_length) for s in specs))
    common = dict(horizon=cfg.horizon, origin_mode=cfg.origin_mode, history=history, warmup=warmup)

    cv_results = [_staged("cv", loyo_cv, spec, series, split, cfg.cv_metric, mode=cfg.cv_mode,
                          jobs=jobs, **common) for spec in specs]
    best, parsimonious = _staged("selection", select_models, cv_results, cfg.band)

    weight_fit, test = None, None
    if cfg.ensemble:
        comps = [next(r for r in cv_results if r.model_id == c) for c in cfg.ensemble]
        weight_fit = _staged("ensemble", fit_ensemble_weights, comps)

    if split.testing_seasons:
        baseline = None
        if cfg.baseline_window is not None:
            baseline = ForecasterSpec("seasonal_median", {"window": cfg.baseline_window},
                                      specs[0].bin_grid, cfg.seed, "baseline_seasonal_median")
        test = _staged("test", rolling_origin_test, specs, series, split, cfg.metrics,
                       baseline=baseline, jobs=jobs, **common)
        if cfg.ensemble:
            _staged("ensemble", _ensemble_reports, test, cfg, weight_fit)

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _staged("write", _write_artifacts, out, cfg, cv_results, best, parsimonious, weight_fit, test)
    return json.loads((out / "run_manifest.json").read_text(encoding="utf-8"))


def _ensemble_reports(test: TestResult, cfg: RunConfig, weight_fit) -> None:
    comps = [test.models[c] for c in cfg.ensemble]
    for name, weights in (("ensemble_trained", weight_fit.weights),
                          ("ensemble_uniform", EnsembleSpec.uniform(cfg.ensemble).weights)):
        cases = ensemble_cases(comps, weights)
        triples = [(c.key, c.forecast, c.truth) for c in cases]
        for metric in cfg.metrics:
            test.reports.append(score_cases(name, metric, triples))
        if test.baseline_id is not None:
            test.add_rmae(name, cases)


def _write_artifacts(out, cfg, cv_results, best, parsimonious, weight_fit, test) -> None:
    written = []
    write_cv_outputs(out, cfg, cv_results)
    written += ["cv_table.csv", "cv_summary.csv"]
    _write_json(out / "selection.json", {
        "config_sha256": cfg.sha256, "cv_metric": cfg.cv_metric, "band": cfg.band,
        "best": best, "parsimonious": parsimonious,
        "sizes": {r.model_id: r.size for r in cv_results}})
    written.append("selection.json")
    if weight_fit is not None:
        _write_json(out / "ensemble_weights.json", {
            "config_sha256": cfg.sha256,
            "weights": dict(zip(cfg.ensemble, map(float, weight_fit.weights))),
            "degenerate": weight_fit.degenerate, "iterations": weight_fit.iterations})
        written.append("ensemble_weights.json")
    if test is not None:
        write_score_csv(out / "test_scores.csv", test.reports, _comment(cfg))
        rows = [[m, _num(test.rmae_pooled[m]), _num(test.rmae_location_mean[m]), test.baseline_id]
                for m in sorted(test.rmae_pooled)]
        _write_rows(out / "rmae.csv", ("model", "rmae_pooled", "rmae_location_mean", "baseline"),
                    rows, _comment(cfg))
        refits = [[m.model_id, s, through] for m in test.models.values() for s, through in m.refits]
        refits += [[m.model_id, s, f"failed: {msg}"] for m in test.models.values()
                   for s, msg in m.failed]
        _write_rows(out / "test_refits.csv", ("model", "season", "fit_through"), refits,
                    _comment(cfg))
        plot = plot_error_by_size(out / "cv_summary.csv", out / "test_scores.csv", cfg.cv_metric)
        _write_rows(out / "plot_error_by_size.csv",
                    ("model", "size", "train_error", "cv_error", "test_error"), plot, _comment(cfg))
        written += ["test_scores.csv", "rmae.csv", "test_refits.csv", "plot_error_by_size.csv"]
    manifest = {
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
        "version": __version__,
        "inputs": {p.name: sha256_file(p) for p in cfg.input_files()},
        "outputs": {name: sha256_file(out / name) for name in written},
    }
    _write_json(out / "run_manifest.json", manifest)


# ------------------------------------------------------------- score

def cmd_score(forecast_files, truth_file, metrics, cycle_length: int = 1) -> list:
    """Score external forecast documents against an incidence CSV of truths.

    Each file's stem becomes the model id.  Raises ``DataError`` listing every
    forecast whose target cannot be matched to a truth.
    """
    truths = read_incidence_csv(truth_file, cycle_length)
    reports, unmatched = [], []
    for path in forecast_files:
        triples = []
        for loc, target, fc in load_forecast_file(path):
            key = CaseKey(loc, target.origin_t, target.describe())
            try:
                truth = realized_target(truths[loc], target)
            except (KeyError, IndexError):
                unmatched.append((0, f"{Path(path).name}: {loc} {target.describe()} "
                                     f"at origin {target.origin_t} has no truth"))
                continue
            triples.append((key, fc, truth))
        if not triples and not unmatched:
            unmatched.append((0, f"{Path(path).name}: no forecasts"))
        for metric in metrics:
            reports.append(score_cases(Path(path).stem, metric, triples))
    if unmatched:
        raise DataError(unmatched)
    return reports


# ------------------------------------------------------------- simulate

def demo_config(incidence_name: str, n_seasons: int, cycle_length: int, n_test: int, seed: int):
    labels = [f"S{i + 1:02d}" for i in range(n_seasons)]
    models = [{"id": f"ar{p}", "family": "seasonal_ar",
               "hyperparameters": {"p": p, "burn_in": 8},
               "bin_grid": {"start": 0, "stop": 400, "width": 2}} for p in range(1, 9)]
    return {
        "data": {"incidence": incidence_name, "cycle_length": cycle_length},
        "split": {"training": labels[:n_seasons - n_test], "testing": labels[n_seasons - n_test:]},
        "models": models,
        "ensemble": {"components": ["ar1", "ar3"]},
        "metrics": ["abs_error", "log_abs_error", "log_score", "crps", "interval_score_0.05"],
        "cv_metric": "log_abs_error",
        "seed": seed,
        "output_dir": "out",
    }


def cmd_simulate(out: Path, n_seasons: int, cycle_length: int, n_locations: int, seed: int,
                 n_test: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    series = [seasonal_ar_data(n_seasons, cycle_length, seed=seed + i, location_id=f"loc{i + 1}")
              for i in range(n_locations)]
    write_incidence_csv(out / "incidence.csv", series)
    _write_json(out / "config.json", demo_config("incidence.csv", n_seasons, cycle_length, n_test, seed))


# ------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epiforecast", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check incidence or vintage CSV files")
    v.add_argument("paths", nargs="+", type=Path)

    r = sub.add_parser("run", help="cross-validate, select, test and ensemble models")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", type=Path)
    r.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("score", help="score forecast JSON documents against observed data")
    s.add_argument("forecasts", nargs="+", type=Path)
    s.add_argument("--truth", required=True, type=Path)
    s.add_argument("--metrics", default="abs_error,log_score,crps")
    s.add_argument("--cycle-length", type=int, default=1)
    s.add_argument("--out", type=Path, default=Path("."))

    m = sub.add_parser("simulate", help="write a synthetic seasonal dataset and a demo config")
    m.add_argument("--out", required=True, type=Path)
    m.add_argument("--seasons", type=int, default=15)
    m.add_argument("--cycle-length", type=int, default=26)
    m.add_argument("--locations", type=int, default=1)
    m.add_argument("--test-seasons", type=int, default=5)
    m.add_argument("--seed", type=int, default=0)
    return p


def _report_data_error(exc: DataError) -> None:
    print(json.dumps({"ok": False, "problems": [{"line": ln, "message": msg}
                                                 for ln, msg in exc.problems]}, indent=2),
          file=sys.stderr)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "validate":
            code, report = cmd_validate(args.paths)
            print(json.dumps(report, indent=2))
            return code
        if args.command == "run":
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            cfg = load_config(args.config, args.seed, args.out)
            manifest = cmd_run(cfg, args.jobs)
            print(json.dumps(manifest, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "score":
            metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
            for name in metrics:
                try:
                    get_metric(name)
                except EpiForecastError as exc:
                    raise ConfigError(str(exc)) from None
            reports = cmd_score(args.forecasts, args.truth, metrics, args.cycle_length)
            args.out.mkdir(parents=True, exist_ok=True)
            write_score_csv(args.out / "scores.csv", reports)
            print(args.out / "scores.csv")
            return EXIT_OK
        if args.command == "simulate":
            cmd_simulate(args.out, args.seasons, args.cycle_length, args.locations, args.seed,
                         args.test_seasons)
            print(args.out / "config.json")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        _report_data_error(exc)
        return EXIT_DATA
    except ForecastValidationError as exc:
        _report_data_error(DataError([(0, v) for v in exc.violations]))
        return EXIT_DATA
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except EpiForecastError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
