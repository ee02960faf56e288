import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epiforecast.ensemble import (EnsembleSpec, combine, mixture_log_score, train_weights)
from epiforecast.errors import ArgumentError, GridError
from epiforecast.forecasts import BinnedForecast, validate
from epiforecast.scoring import log_score_one

EDGES = np.arange(6.0)


def one_hot(b, edges=EDGES):
    p = np.zeros(edges.size - 1)
    p[b] = 1
    return BinnedForecast(edges, p)


@st.composite
def density(draw, n=5):
    raw = np.array(draw(st.lists(st.floats(0.01, 1), min_size=n, max_size=n)))
    return BinnedForecast(EDGES, raw / raw.sum())


class TestSpec:
    def test_invariants(self):
        with pytest.raises(ArgumentError):
            EnsembleSpec(("a", "b"), (0.7, 0.7))
        with pytest.raises(ArgumentError):
            EnsembleSpec(("a", "b"), (1.2, -0.2))
        with pytest.raises(ArgumentError):
            EnsembleSpec(("a",), (0.5, 0.5))

    def test_json_round_trip(self):
        spec = EnsembleSpec.uniform(["x", "y", "z"])
        assert json.loads(spec.to_json()) == {"x": 1 / 3, "y": 1 / 3, "z": 1 / 3}
        assert EnsembleSpec.from_json(spec.to_json()) == spec


class TestCombine:
    @given(density(), st.floats(0, 1))
    def test_identical_components(self, f, w):
        out = combine([f, f], [w, 1 - w])
        assert np.allclose(out.probs, f.probs, atol=1e-15)

    def test_bimodal(self):
        out = combine([one_hot(0), one_hot(3)], [0.5, 0.5])
        assert out.probs.tolist() == [0.5, 0, 0, 0.5, 0]

    @given(density(), density())
    def test_unit_weight_returns_component(self, f, g):
        assert np.array_equal(combine([f, g], [1, 0]).probs, f.probs)

    def test_grid_mismatch(self):
        with pytest.raises(GridError):
            combine([one_hot(0), BinnedForecast(EDGES * 2, [1, 0, 0, 0, 0])], [0.5, 0.5])

    @given(density(), density(), density(), st.lists(st.floats(0.01, 1), min_size=3, max_size=3))
    def test_associative_under_renormalisation(self, f, g, h, w):
        w = np.array(w) / sum(w)
        flat = combine([f, g, h], w)
        inner = combine([f, g], w[:2] / w[:2].sum())
        nested = combine([inner, h], [w[:2].sum(), w[2]])
        assert np.allclose(flat.probs, nested.probs, atol=1e-12)
        assert validate(flat) == []


class TestTrainWeights:
    def test_perfect_component_dominates(self):
        rng = np.random.default_rng(0)
        cases, truths = [], []
        for _ in range(30):
            b = int(rng.integers(5))
            wrong = (b + 1 + int(rng.integers(4))) % 5
            cases.append([one_hot(wrong), one_hot(b), one_hot((b + 2) % 5)])
            truths.append(b + 0.5)
        fit = train_weights(cases, truths)
        assert fit.weights[1] > 0.95 and not fit.degenerate

    def test_identical_components_degenerate(self):
        f = BinnedForecast(EDGES, [0.2] * 5)
        fit = train_weights([[f, f]] * 4, [0.5, 1.5, 2.5, 3.5])
        assert fit.degenerate and fit.weights.tolist() == [0.5, 0.5]

    def test_single_case_single_informative_component(self):
        cases = [[one_hot(2), BinnedForecast(EDGES, [0.2] * 5)]]
        fit = train_weights(cases, [2.5])
        mix = mixture_log_score(cases, [2.5], fit.weights)
        best = max(log_score_one(f, 2.5) for f in cases[0])
        assert mix >= best - 1e-9

    def test_preconditions(self):
        with pytest.raises(ArgumentError):
            train_weights([[one_hot(0)]], [0.5])
        with pytest.raises(ArgumentError):
            train_weights([], [])
        with pytest.raises(GridError):
            train_weights([[one_hot(0), BinnedForecast(EDGES + 1, [1, 0, 0, 0, 0])]], [0.5])

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(density(), density(), density(), st.integers(0, 4)), min_size=1,
                    max_size=12))
    def test_em_monotone_and_beats_uniform(self, rows):
        cases = [list(r[:3]) for r in rows]
        truths = [r[3] + 0.5 for r in rows]
        fit = train_weights(cases, truths)
        trace = fit.objective_trace
        assert all(b >= a - 1e-12 for a, b in zip(trace, trace[1:]))
        assert abs(fit.weights.sum() - 1) < 1e-9 and np.all(fit.weights >= 0)
        assert mixture_log_score(cases, truths, fit.weights) >= \
            mixture_log_score(cases, truths, [1 / 3] * 3) - 1e-12

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        cases = [[BinnedForecast(EDGES, p / p.sum()) for p in rng.random((2, 5))] for _ in range(10)]
        truths = rng.integers(0, 5, 10) + 0.5
        a, b = train_weights(cases, truths), train_weights(cases, truths)
        assert np.array_equal(a.weights, b.weights) and a.iterations == b.iterations
