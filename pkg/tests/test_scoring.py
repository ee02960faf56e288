import itertools
import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings, strategies as st

from epiforecast.errors import ArgumentError, DegenerateReferenceError, DegenerateVarianceError
from epiforecast.forecasts import BinnedForecast, IntervalForecast, PointForecast, SampleForecast
from epiforecast.scoring import (CaseKey, ScoreReport, coverage_rate, crps, crps_skill,
                                 describe_rmae, dm_test, get_metric, interval_score, log_score,
                                 mae, metric_names, pooled_rmae, read_score_csv, rmae,
                                 score_cases, truth_value, write_score_csv)


def _crps_numeric(cdf, z, lo, hi, n=200_001):
    # oracle: trapezoid integration of (F - H)^2, split at z so the step is not smeared
    left, right = np.linspace(lo, z, n), np.linspace(z, hi, n)
    return float(trapezoid(cdf(left) ** 2, left) + trapezoid((cdf(right) - 1) ** 2, right))


class TestMae:
    @pytest.mark.parametrize("points,truths,expected", [([1, 2], [1, 2], 0), ([0, 0], [2, 4], 3),
                                                         ([5], [3], 2)])
    def test_examples(self, points, truths, expected):
        assert mae([PointForecast(p) for p in points], truths) == expected

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            mae([PointForecast(1)], [1, 2])


class TestRmae:
    def test_examples(self):
        assert rmae([3, 4], [3, 4]) == 1.0
        assert rmae([1, 1], [2, 2]) == 0.5

    def test_zero_reference(self):
        with pytest.raises(DegenerateReferenceError):
            rmae([1], [0])

    def test_description(self):
        assert describe_rmae(0.9) == (
            "predictions were 10% closer to the observed value than the reference")
        assert "further" in describe_rmae(1.25)

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=20), st.floats(1e-3, 1e3))
    def test_scale_invariant(self, errs, c):
        b = [e + 1 for e in errs]
        assert rmae([c * e for e in errs], [c * e for e in b]) == pytest.approx(rmae(errs, b))


class TestIntervalMetrics:
    def test_coverage(self):
        ivs = [IntervalForecast(0.1, 0, 10)] * 2
        assert coverage_rate(ivs, [5, 12]) == 0.5
        assert coverage_rate(ivs, [0, 10]) == 1.0

    @pytest.mark.parametrize("alpha,z,expected", [(0.2, 5, 10), (0.2, 12, 30), (0.05, 12, 90)])
    def test_interval_score(self, alpha, z, expected):
        # oracle: width + (2/alpha) * distance outside
        oracle = 10 + (2 / alpha) * max(0 - z, 0) + (2 / alpha) * max(z - 10, 0)
        assert interval_score([IntervalForecast(alpha, 0, 10)], [z]) == pytest.approx(oracle)
        assert oracle == pytest.approx(expected)

    def test_mixed_alpha(self):
        ivs = [IntervalForecast(0.1, 0, 1), IntervalForecast(0.2, 0, 1)]
        with pytest.raises(ArgumentError):
            coverage_rate(ivs, [0, 0])
        with pytest.raises(ArgumentError):
            interval_score(ivs, [0, 0])

    def test_true_quantile_interval_minimises_expected_score(self):
        rng = np.random.default_rng(7)
        z = rng.standard_normal(20_000)
        from scipy.stats import norm
        q = norm.ppf(0.95)

        def score(lo, hi):
            return interval_score([IntervalForecast(0.1, lo, hi)] * z.size, z)

        best = score(-q, q)
        for shift, scale in itertools.product((-0.3, 0, 0.3), (0.7, 1, 1.3)):
            if (shift, scale) != (0, 1):
                assert best < score(-q * scale + shift, q * scale + shift)


class TestLogScore:
    def test_uniform(self):
        f = BinnedForecast(np.arange(11), np.full(10, 0.1))
        assert log_score([f], [3.5]) == pytest.approx(math.log(0.1), abs=1e-9)

    def test_one_hot(self):
        assert log_score([BinnedForecast([0, 1, 2], [0, 1])], [1.5]) == 0

    def test_outside_support_and_zero_mass(self):
        f = BinnedForecast([0, 1, 2], [0, 1])
        assert log_score([f], [7]) == -10
        assert log_score([f], [0.5]) == -10

    def test_last_bin_closed(self):
        assert log_score([BinnedForecast([0, 1, 2], [0.5, 0.5])], [2]) == math.log(0.5)


class TestCrps:
    def test_point_mass(self):
        assert crps(PointForecast(5), 3) == 2
        assert crps(SampleForecast([5, 5, 5]), 3) == 2

    def test_two_samples(self):
        s = [0, 2]
        # oracle: brute-force double sum
        e1 = np.mean([abs(x - 1) for x in s])
        e2 = np.mean([abs(x - y) for x in s for y in s])
        assert crps(SampleForecast(s), 1) == pytest.approx(e1 - 0.5 * e2) == 0.5

    def test_uniform_bin(self):
        assert crps(BinnedForecast([0, 1], [1]), 0) == pytest.approx(1 / 3)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.1, 3), min_size=1, max_size=5), st.floats(-2, 15))
    def test_binned_matches_numeric_integral(self, widths, z):
        edges = np.concatenate(([0.0], np.cumsum(widths)))
        probs = np.arange(1, len(widths) + 1, dtype=float)
        f = BinnedForecast(edges, probs / probs.sum())
        cum = np.concatenate(([0.0], np.cumsum(f.probs)))
        num = _crps_numeric(lambda x: np.interp(x, edges, cum), z, min(z, 0) - 1,
                            max(z, edges[-1]) + 1)
        assert crps(f, z) == pytest.approx(num, abs=1e-6)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-60, 60))
    def test_samples_match_pairwise_definition(self, s, z):
        x = np.array(s)
        oracle = np.mean(np.abs(x - z)) - 0.5 * np.mean(np.abs(x[:, None] - x[None, :]))
        assert crps(SampleForecast(s), z) == pytest.approx(oracle, abs=1e-9)

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    def test_point_is_absolute_error(self, v, z):
        assert crps(PointForecast(v), z) == abs(v - z)

    def test_skill(self):
        assert crps_skill(2, 2) == 1.0
        assert crps_skill(0, 3) == 0.0
        assert crps_skill(1, 2) == 0.5
        with pytest.raises(DegenerateReferenceError):
            crps_skill(1, 0)


class TestDm:
    def test_identical_losses(self):
        with pytest.raises(DegenerateVarianceError):
            dm_test([1, 2, 3, 4], [1, 2, 3, 4])

    def test_constant_shift_is_degenerate(self):
        with pytest.raises(DegenerateVarianceError):
            dm_test([2, 3, 4, 5], [1, 2, 3, 4])

    def test_strong_difference(self):
        rng = np.random.default_rng(1)
        d = rng.normal(1, 0.01, 100)
        res = dm_test(d, np.zeros(100))
        assert res.p_value < 1e-6 and res.statistic > 8

    def test_statistic_against_hand_computation(self):
        rng = np.random.default_rng(3)
        a, b = rng.random(30), rng.random(30)
        d = a - b
        n, h = 30, 3
        # oracle: loop-based autocovariances, then the HLN factor
        g = [sum((d[t] - d.mean()) * (d[t - k] - d.mean()) for t in range(k, n)) / n for k in range(h)]
        v = g[0] + 2 * (g[1] + g[2])
        stat = d.mean() / math.sqrt(v / n) * math.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)
        res = dm_test(a, b, h)
        assert res.statistic == pytest.approx(stat, rel=1e-12)
        assert res.p_value == pytest.approx(math.erfc(abs(stat) / math.sqrt(2)), rel=1e-9)

    def test_preconditions(self):
        with pytest.raises(ArgumentError):
            dm_test([1, 2, 3], [1, 2, 4])
        with pytest.raises(ArgumentError):
            dm_test([1, 2, 3, float("inf")], [1, 2, 3, 4])


class TestRegistryAndReports:
    def test_names(self):
        names = metric_names()
        for n in ("abs_error", "log_score", "crps", "mae"):
            assert n in names
        assert get_metric("interval_score_0.05").name == "interval_score_0.05"
        with pytest.raises(ArgumentError):
            get_metric("nonsense")

    def test_orientation(self):
        assert get_metric("log_score").loss(BinnedForecast([0, 1], [1]), 0.5) == 0
        assert get_metric("log_score").higher_is_better
        assert not get_metric("crps").higher_is_better

    def test_truth_value(self):
        assert truth_value(True) == 1.0
        assert truth_value(frozenset({4, 2})) == 2.0

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
    def test_aggregate_is_mean(self, scores):
        r = ScoreReport("m", "x", [(CaseKey("a", i, "t"), s) for i, s in enumerate(scores)])
        assert r.n == len(scores)
        assert r.aggregate == pytest.approx(float(np.mean(scores)), abs=1e-9)

    def test_location_pooling(self):
        r = ScoreReport("m", "x", [(CaseKey("a", 1, "t"), 1.0), (CaseKey("a", 2, "t"), 3.0),
                                   (CaseKey("b", 1, "t"), 10.0)])
        assert r.by_location() == {"a": 2.0, "b": 10.0}
        assert r.location_pooled() == 6.0

    def test_pooled_rmae(self):
        a = ScoreReport("a", "abs_error", [(CaseKey("x", 1, "t"), 1.0), (CaseKey("x", 2, "t"), 1.0)])
        b = ScoreReport("b", "abs_error", [(CaseKey("x", 1, "t"), 2.0), (CaseKey("y", 9, "t"), 5.0)])
        assert pooled_rmae(a, b) == 0.5

    def test_csv_round_trip(self, tmp_path):
        cases = [(CaseKey("x", i, "step_ahead[k=1]"), PointForecast(i / 3), 1.0) for i in range(5)]
        reps = [score_cases("m", "abs_error", cases), score_cases("m", "sq_error", cases)]
        p = tmp_path / "s.csv"
        write_score_csv(p, reps, "hello")
        text = p.read_text()
        assert text.startswith("# hello\nmodel,metric,location,origin_t,target,score\n")
        assert text.count(",ALL,,aggregate,") == 2
        back = read_score_csv(p)
        assert [(r.model_id, r.metric, r.per_case) for r in back] == \
               [(r.model_id, r.metric, r.per_case) for r in reps]
