import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epiforecast.errors import ArgumentError, ForecastValidationError
from epiforecast.forecasts import (BinnedForecast, IntervalForecast, PointForecast,
                                   SampleForecast, cdf_at, forecast_from_doc, forecast_to_doc,
                                   interval_from_density, load_forecast_file, point_from_density,
                                   quantile, validate)
from epiforecast.series import PeakTiming, Season, StepAhead, Target, ThresholdExceedance


@st.composite
def binned(draw, max_bins=8):
    n = draw(st.integers(1, max_bins))
    widths = draw(st.lists(st.floats(0.1, 5), min_size=n, max_size=n))
    start = draw(st.floats(0, 10))
    edges = start + np.concatenate(([0.0], np.cumsum(widths)))
    raw = np.array(draw(st.lists(st.floats(0, 1), min_size=n, max_size=n)))
    if raw.sum() == 0:
        raw[0] = 1.0
    return BinnedForecast(edges, raw / raw.sum())


samples_st = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30)


class TestPointFromDensity:
    def test_median_of_samples(self):
        assert point_from_density(SampleForecast([1, 2, 100]), "absolute").value == 2

    def test_mean_of_samples(self):
        assert point_from_density(SampleForecast([1, 2, 100]), "squared").value == pytest.approx(
            103 / 3, abs=1e-9)

    def test_single_bin_mean_is_midpoint(self):
        assert point_from_density(BinnedForecast([0, 2], [1]), "squared").value == 1

    def test_even_sample_median_is_midpoint(self):
        assert point_from_density(SampleForecast([4, 1, 3, 2]), "absolute").value == 2.5

    def test_unknown_loss(self):
        with pytest.raises(ArgumentError):
            point_from_density(SampleForecast([1]), "pinball")

    @settings(max_examples=60)
    @given(binned())
    def test_median_minimises_expected_absolute_loss(self, f):
        # oracle: expected |X - v| by fine quadrature of the uniform-within-bin density
        xs, w = [], []
        for lo, hi, p in zip(f.edges[:-1], f.edges[1:], f.probs):
            pts = lo + (np.arange(400) + 0.5) / 400 * (hi - lo)
            xs.append(pts)
            w.append(np.full(400, p / 400))
        xs, w = np.concatenate(xs), np.concatenate(w)

        def risk(v):
            return float(np.sum(w * np.abs(xs - v)))

        med = point_from_density(f, "absolute").value
        grid = np.linspace(f.edges[0], f.edges[-1], 301)
        assert risk(med) <= min(risk(v) for v in grid) + 1e-9 + 1e-3 * (f.edges[-1] - f.edges[0])


class TestIntervals:
    def test_uniform_bin(self):
        iv = interval_from_density(BinnedForecast([0, 100], [1]), 0.1)
        assert (iv.lower, iv.upper) == pytest.approx((5, 95))

    def test_point_mass_samples(self):
        iv = interval_from_density(SampleForecast([7] * 5), 0.3)
        assert (iv.lower, iv.upper) == (7, 7)

    def test_samples_one_to_hundred(self):
        s = np.arange(1, 101, dtype=float)
        iv = interval_from_density(SampleForecast(s[::-1]), 0.05)
        # oracle: smallest order statistic whose empirical CDF reaches p
        def inv(p):
            return next(x for i, x in enumerate(s, start=1) if i / 100 >= p)
        assert (iv.lower, iv.upper) == (inv(0.025), inv(0.975)) == (3, 98)

    def test_alpha_range(self):
        with pytest.raises(ArgumentError):
            interval_from_density(SampleForecast([1]), 1.0)

    @given(binned(), st.floats(0.01, 0.98), st.floats(0.01, 0.98))
    def test_nested_in_alpha(self, f, a1, a2):
        a1, a2 = sorted((a1, a2))
        wide, narrow = interval_from_density(f, a1), interval_from_density(f, a2)
        assert wide.lower <= narrow.lower + 1e-12 and narrow.upper <= wide.upper + 1e-12

    @given(samples_st, st.floats(0.01, 0.98), st.floats(0.01, 0.98))
    def test_nested_in_alpha_samples(self, s, a1, a2):
        a1, a2 = sorted((a1, a2))
        wide, narrow = interval_from_density(SampleForecast(s), a1), interval_from_density(SampleForecast(s), a2)
        assert wide.lower <= narrow.lower and narrow.upper <= wide.upper


class TestCdf:
    def test_examples(self):
        assert cdf_at(BinnedForecast([0, 1], [1]), 0.25) == 0.25
        assert cdf_at(BinnedForecast([0, 1], [1]), -3) == 0
        assert cdf_at(SampleForecast([0, 2]), 1) == 0.5

    @given(binned(), st.lists(st.floats(-20, 60), min_size=2, max_size=10))
    def test_monotone_with_limits(self, f, zs):
        zs = sorted(zs)
        vals = [cdf_at(f, z) for z in zs]
        assert all(0 <= v <= 1 for v in vals)
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        assert cdf_at(f, f.edges[0] - 1) == 0 and cdf_at(f, f.edges[-1] + 1) == 1

    @given(binned(), st.floats(0.001, 0.999))
    def test_quantile_inverts_cdf(self, f, p):
        assert cdf_at(f, quantile(f, p)) == pytest.approx(p, abs=1e-9)


class TestValidate:
    def test_mass(self):
        assert validate(BinnedForecast([0, 1, 2], [0.5, 0.48])) == ["mass 0.98 ≠ 1"]

    def test_edges(self):
        assert "edges not strictly increasing" in validate(BinnedForecast([0, 1, 1], [0.5, 0.5]))

    def test_valid(self):
        assert validate(BinnedForecast([0, 1, 2], [0.5, 0.5])) == []
        assert validate(SampleForecast([1.0])) == []
        assert validate(IntervalForecast(0.1, 0, 1)) == []

    def test_incidence_support(self):
        f = BinnedForecast([-1, 0, 1], [0.5, 0.5])
        assert validate(f) == []
        assert validate(f, incidence=True) == ["support extends below 0"]

    def test_interval_and_garbage(self):
        assert validate(IntervalForecast(0.1, 2, 1)) == ["lower bound above upper bound"]
        assert validate(IntervalForecast(1.5, 0, 1))
        assert validate("not a forecast")
        assert validate(BinnedForecast([0, 1], [[1, 2]]))

    def test_empty_samples(self):
        assert validate(SampleForecast([])) == ["no samples"]


class TestDocuments:
    cases = [
        (Target(StepAhead(2), 10), BinnedForecast([0, 1, 2], [0.25, 0.75])),
        (Target(ThresholdExceedance(1, 5.5), 3), SampleForecast([1, 2, 3])),
        (Target(PeakTiming(Season("2019", 1, 26)), 0), PointForecast(4.0)),
        (Target(PeakTiming("2019"), 4), IntervalForecast(0.05, 1, 9)),
    ]

    @pytest.mark.parametrize("target,fc", cases)
    def test_round_trip(self, target, fc):
        doc = json.loads(json.dumps(forecast_to_doc("north", target, fc)))
        loc, t2, f2 = forecast_from_doc(doc)
        assert (loc, t2) == ("north", target)
        assert f2 == fc

    def test_unknown_field_rejected(self):
        doc = forecast_to_doc("n", *self.cases[0])
        doc["samples"] = [1]
        with pytest.raises(ForecastValidationError, match="unknown field"):
            forecast_from_doc(doc)

    def test_missing_field_and_invalid_density(self):
        doc = forecast_to_doc("n", *self.cases[0])
        del doc["probs"]
        with pytest.raises(ForecastValidationError, match="missing"):
            forecast_from_doc(doc)
        doc = forecast_to_doc("n", self.cases[0][0], BinnedForecast([0, 1, 2], [0.3, 0.3]))
        with pytest.raises(ForecastValidationError):
            forecast_from_doc(doc)

    def test_file_formats(self, tmp_path):
        docs = [forecast_to_doc("n", t, f) for t, f in self.cases]
        (tmp_path / "a.json").write_text(json.dumps(docs))
        (tmp_path / "b.jsonl").write_text("\n".join(json.dumps(d) for d in docs) + "\n")
        (tmp_path / "c.json").write_text(json.dumps(docs[0]))
        assert len(load_forecast_file(tmp_path / "a.json")) == 4
        assert len(load_forecast_file(tmp_path / "b.jsonl")) == 4
        assert len(load_forecast_file(tmp_path / "c.json")) == 1


def test_bin_of_half_open_last_closed():
    f = BinnedForecast([0, 1, 2], [0.5, 0.5])
    assert [f.bin_of(z) for z in (-0.1, 0, 0.999, 1, 2, 2.1)] == [-1, 0, 0, 1, 1, -1]
    assert math.isclose(f.midpoints[1], 1.5)
