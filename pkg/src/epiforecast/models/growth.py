"""Quadratic growth model: incidence as a downward parabola in cumulative cases."""
from __future__ import annotations

import math

import numpy as np

from ..errors import TrainingError
from .base import Family, FitResult, register


@register
class QuadGrowth(Family):
    """``incidence_t = a*C_{t-1} - (a/K)*C_{t-1}^2`` fitted by linear least squares.

    ``C_t`` is cumulative incidence, offset by hyperparameter ``c0`` (cases
    before the first observation, default 0).  Incidence peaks at ``a*K/4``
    when ``C`` reaches ``K/2``.
    """

    name = "quad_growth"

    def size(self, spec):
        return 2

    def _cumulative(self, spec, values):
        return float(spec.hp("c0", 0.0)) + np.cumsum(values)

    def fit(self, spec, train, holdout):
        if holdout:
            raise TrainingError("quad_growth describes a single outbreak and cannot skip held-out seasons")
        y = train.values
        C = self._cumulative(spec, y)
        prev = np.concatenate(([float(spec.hp("c0", 0.0))], C[:-1]))
        rows = prev > 0
        if rows.sum() < 3:
            raise TrainingError("need at least 3 intervals with positive cumulative counts")
        X = np.column_stack([prev[rows], prev[rows] ** 2])
        (lin, quad), *_ = np.linalg.lstsq(X, y[rows], rcond=None)
        if not (lin > 0 and quad < 0):
            raise TrainingError(f"fitted curve does not saturate (a={lin:.4g}, quadratic term={quad:.4g})")
        a, K = float(lin), float(-lin / quad)
        resid = y[rows] - X @ np.array([lin, quad])
        sse = float(resid @ resid)
        params = {"a": a, "K": K, "peak_incidence": a * K / 4, "peak_cumulative": K / 2}
        return FitResult(self.name, params, sse, math.sqrt(sse / rows.sum()), True, int(rows.sum()))

    def mean_path(self, spec, fit, history, steps):
        a, K = fit.parameters["a"], fit.parameters["K"]
        C = float(self._cumulative(spec, history.values)[-1])
        out = np.empty(steps)
        for h in range(steps):
            inc = max(a * C - a / K * C * C, 0.0)
            out[h] = inc
            C += inc
        return out
