"""Experiment configuration: one JSON document describing a full run."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ArgumentError, ConfigError, EpiForecastError
from .models import ForecasterSpec, make_grid
from .models.base import family_for
from .scoring import get_metric

DEFAULT_METRICS = ("abs_error", "log_abs_error", "log_score", "crps")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _grid(raw, where: str) -> np.ndarray:
    if raw is None:
        return make_grid(1000)
    if isinstance(raw, dict):
        try:
            return make_grid(float(raw["stop"]), float(raw.get("width", 1.0)), float(raw.get("start", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: bin_grid needs numeric start/stop/width ({exc})") from None
    if isinstance(raw, list):
        return np.asarray(raw, dtype=float)
    raise ConfigError(f"{where}: bin_grid must be a list of edges or {{start, stop, width}}")


@dataclass(frozen=True)
class ModelEntry:
    model_id: str
    family: str
    hyperparameters: dict
    bin_grid: object = None
    size: Optional[int] = None

    def spec(self, seed: int) -> ForecasterSpec:
        hp = dict(self.hyperparameters)
        if self.size is not None:
            hp["size"] = self.size
        return ForecasterSpec(self.family, hp, _grid(self.bin_grid, self.model_id), seed, self.model_id)


@dataclass
class RunConfig:
    incidence: Path
    cycle_length: int
    training: tuple
    testing: tuple
    models: tuple
    seed: int
    output_dir: Path
    vintages: Optional[Path] = None
    ensemble: tuple = ()
    metrics: tuple = DEFAULT_METRICS
    cv_metric: str = "log_abs_error"
    cv_mode: str = "loyo"
    band: str = "se"
    horizon: int = 1
    origin_mode: str = "rolling"
    warmup: Optional[int] = None
    nowcast_k: int = 0
    nowcast_profile: object = None
    baseline_window: Optional[int] = 10
    raw: dict = field(default_factory=dict)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode("utf-8")).hexdigest()

    def specs(self) -> list[ForecasterSpec]:
        return [m.spec(self.seed) for m in self.models]

    def input_files(self) -> list[Path]:
        return [p for p in (self.incidence, self.vintages) if p is not None]


def _require(doc, key, where):
    if key not in doc:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return doc[key]


_TOP_KEYS = {"data", "split", "models", "ensemble", "metrics", "cv_metric", "cv_mode", "band",
             "horizon", "origin_mode", "warmup", "nowcast", "seed", "output_dir", "baseline"}


def parse_config(doc: dict, base_dir: Path = Path("."), seed_override: Optional[int] = None,
                 out_override: Optional[Path] = None) -> RunConfig:
    """Validate a config document; relative paths resolve against ``base_dir``."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    doc = json.loads(json.dumps(doc))
    if seed_override is not None:
        doc["seed"] = seed_override
    seed = doc.get("seed")
    if seed is None:
        raise ConfigError("config has no seed; give one in the file or with --seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")

    data = _require(doc, "data", "config")
    incidence = base_dir / _require(data, "incidence", "data")
    if not incidence.is_file():
        raise ConfigError(f"incidence file {incidence} does not exist")
    vintages = data.get("vintages")
    if vintages is not None:
        vintages = base_dir / vintages
        if not vintages.is_file():
            raise ConfigError(f"vintage file {vintages} does not exist")
    cycle_length = data.get("cycle_length", 1)
    if not isinstance(cycle_length, int) or cycle_length < 1:
        raise ConfigError("data.cycle_length must be a positive integer")

    split = _require(doc, "split", "config")
    training = tuple(_require(split, "training", "split"))
    testing = tuple(split.get("testing", ()))
    if len(training) < 2:
        raise ConfigError("split.training needs at least two season labels")

    entries = []
    for i, m in enumerate(_require(doc, "models", "config")):
        where = f"models[{i}]"
        extra = set(m) - {"id", "family", "hyperparameters", "bin_grid", "size"}
        if extra:
            raise ConfigError(f"{where}: unknown key(s) {', '.join(sorted(extra))}")
        entry = ModelEntry(_require(m, "id", where), _require(m, "family", where),
                           m.get("hyperparameters", {}), m.get("bin_grid"), m.get("size"))
        try:
            family_for(entry.family)
            entry.spec(seed)
        except (EpiForecastError, KeyError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
        entries.append(entry)
    if not entries:
        raise ConfigError("at least one model is required")
    ids = [e.model_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ConfigError("model ids must be unique")

    ensemble = tuple((doc.get("ensemble") or {}).get("components", ()))
    if ensemble and (len(ensemble) < 2 or any(c not in ids for c in ensemble)):
        raise ConfigError("ensemble.components must name at least two configured models")

    metrics = tuple(doc.get("metrics", DEFAULT_METRICS))
    cv_metric = doc.get("cv_metric", "log_abs_error")
    for name in metrics + (cv_metric,):
        try:
            get_metric(name)
        except (ArgumentError, KeyError):
            raise ConfigError(f"unknown metric {name!r}") from None
    if cv_metric not in metrics:
        metrics += (cv_metric,)

    nowcast = doc.get("nowcast") or {}
    k = nowcast.get("k", 0)
    if not isinstance(k, int) or k < 0:
        raise ConfigError("nowcast.k must be a non-negative integer")
    profile = nowcast.get("profile")
    if profile is not None and vintages is None:
        raise ConfigError("nowcast.profile needs data.vintages")
    if profile is not None and profile != "estimate" and not isinstance(profile, list):
        raise ConfigError("nowcast.profile must be \"estimate\" or a list of completeness values")

    choices = {"cv_mode": ("loyo", "prospective"), "band": ("se", "sd"),
               "origin_mode": ("rolling", "season_start")}
    defaults = {"cv_mode": "loyo", "band": "se", "origin_mode": "rolling"}
    picked = {}
    for key, allowed in choices.items():
        picked[key] = doc.get(key, defaults[key])
        if picked[key] not in allowed:
            raise ConfigError(f"{key} must be one of {', '.join(allowed)}")
    horizon = doc.get("horizon", 1)
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError("horizon must be a positive integer")
    baseline = doc.get("baseline", {"window": 10})
    out = out_override or base_dir / doc.get("output_dir", "out")

    return RunConfig(incidence, cycle_length, training, testing, tuple(entries), seed, Path(out),
                     vintages, ensemble, metrics, cv_metric, picked["cv_mode"], picked["band"],
                     horizon, picked["origin_mode"], doc.get("warmup"), k, profile,
                     None if baseline is None else baseline.get("window"), doc)


def load_config(path, seed_override: Optional[int] = None,
                out_override: Optional[Path] = None) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(doc, path.parent, seed_override, out_override)
