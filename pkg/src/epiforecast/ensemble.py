"""Linear-pool ensembles of binned forecasts and EM-trained mixture weights."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, GridError
from .forecasts import BinnedForecast, require_valid
from .scoring import LOG_SCORE_FLOOR, log_score_one

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class EnsembleSpec:
    component_ids: tuple
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "component_ids", tuple(self.component_ids))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        check_weights(self.weights, len(self.component_ids))

    @classmethod
    def uniform(cls, component_ids):
        ids = tuple(component_ids)
        return cls(ids, (1.0 / len(ids),) * len(ids))

    def to_json(self) -> str:
        return json.dumps(dict(zip(self.component_ids, self.weights)), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EnsembleSpec":
        data = json.loads(text)
        return cls(tuple(data), tuple(data.values()))


def check_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ArgumentError(f"{w.size} weights for {n} components")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ArgumentError("weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ArgumentError(f"weights sum to {w.sum()}, not 1")
    return w


def combine(forecasts, weights) -> BinnedForecast:
    """Weighted per-bin mixture of forecasts sharing one edge vector."""
    forecasts = list(forecasts)
    if not forecasts:
        raise ArgumentError("nothing to combine")
    w = check_weights(weights, len(forecasts))
    edges = forecasts[0].edges
    for f in forecasts:
        require_valid(f)
        if not np.array_equal(f.edges, edges):
            raise GridError("components use different bin edges")
    probs = w @ np.vstack([f.probs for f in forecasts])
    # a convex mix of valid densities is already normalised; leaving it alone keeps (1, 0) exact
    return require_valid(BinnedForecast(edges, probs))


@dataclass
class WeightFit:
    weights: np.ndarray
    degenerate: bool = False
    iterations: int = 0
    objective_trace: list = field(default_factory=list)

    def spec(self, component_ids) -> EnsembleSpec:
        return EnsembleSpec(tuple(component_ids), tuple(self.weights))


def _truth_masses(component_forecasts_by_case, truths) -> np.ndarray:
    rows = []
    for comps, z in zip(component_forecasts_by_case, truths):
        row = []
        for f in comps:
            b = f.bin_of(float(z))
            row.append(f.probs[b] if b >= 0 else 0.0)
        rows.append(row)
    return np.array(rows, dtype=float)


def mixture_log_score(component_forecasts_by_case, truths, weights,
                      floor: float = LOG_SCORE_FLOOR) -> float:
    """Mean floored log score of the weighted mixture over the cases."""
    w = np.asarray(weights, dtype=float)
    scores = [log_score_one(combine(comps, w), z, floor)
              for comps, z in zip(component_forecasts_by_case, truths)]
    return math.fsum(scores) / len(scores)


def train_weights(component_forecasts_by_case, truths, max_iter: int = 500,
                  tol: float = 1e-8) -> WeightFit:
    """Mixture weights maximising the mean log score by expectation-maximisation.

    ``component_forecasts_by_case[i][c]`` is component ``c``'s binned forecast
    for case ``i``.  Cases where every component gives the truth zero mass do
    not depend on the weights and are left out of the updates.
    """
    cases = [list(c) for c in component_forecasts_by_case]
    truths = list(truths)
    if not cases or len(cases) != len(truths):
        raise ArgumentError("need at least one case and one truth per case")
    m = len(cases[0])
    if m < 2 or any(len(c) != m for c in cases):
        raise ArgumentError("need at least two components, the same number in every case")
    for comps in cases:
        e0 = comps[0].edges
        if any(not np.array_equal(f.edges, e0) for f in comps):
            raise GridError("components use different bin edges within a case")

    uniform = np.full(m, 1.0 / m)
    identical = all(
        all(np.array_equal(f.probs, comps[0].probs) for f in comps[1:]) for comps in cases)
    P = _truth_masses(cases, truths)
    P = P[P.sum(axis=1) > 0]
    if identical or P.size == 0 or np.all(P == P[:, :1]):
        return WeightFit(uniform, degenerate=True)

    w = uniform.copy()
    trace = [float(np.mean(np.log(P @ w)))]
    it = 0
    for it in range(1, max_iter + 1):
        mix = P @ w
        resp = P * w / mix[:, None]
        new = resp.mean(axis=0)
        new /= new.sum()
        change = float(np.max(np.abs(new - w)))
        w = new
        trace.append(float(np.mean(np.log(P @ w))))
        if change < tol:
            break
    return WeightFit(w, degenerate=False, iterations=it, objective_trace=trace)
