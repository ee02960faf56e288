"""Statistical baselines: same-season median, Holt-Winters and seasonal autoregression."""
from __future__ import annotations

import itertools
import math

import numpy as np

from ..errors import ArgumentError, TrainingError
from ..series import TimeSeries, season_index
from .base import Family, FitResult, N_TRAJECTORIES, histogram_density, register


@register
class SeasonalMedian(Family):
    """Empirical distribution of past values at the same point in the cycle.

    ``window`` (in cycles) keeps only the most recent values, e.g. ``window=10``
    gives a rolling ten-season median.
    """

    name = "seasonal_median"

    def check(self, spec):
        w = spec.hp("window")
        if w is not None and int(w) < 1:
            raise ArgumentError("window must be >= 1 cycle")

    def size(self, spec):
        return 0

    def min_train(self, spec, cycle_length):
        return 2 * cycle_length

    def min_history(self, spec, cycle_length):
        return 0

    def fit(self, spec, train, holdout):
        L = train.cycle_length
        history: dict[int, list] = {s: [] for s in range(1, L + 1)}
        for t, v in enumerate(train.values, start=1):
            if t not in holdout:
                history[season_index(train, t)].append(float(v))
        w = spec.hp("window")
        if w is not None:
            history = {s: v[-int(w):] for s, v in history.items()}
        if any(not v for v in history.values()):
            raise TrainingError("some points of the cycle have no history")
        sq = [(x - float(np.median(v))) ** 2 for v in history.values() for x in v]
        sse = math.fsum(sq)
        return FitResult(self.name, {}, sse, math.sqrt(sse / len(sq)), True, len(sq),
                         {"history": {str(s): v for s, v in history.items()}})

    def _values_at(self, fit, history, t):
        return np.array(fit.state["history"][str(season_index(history, t))])

    def mean_path(self, spec, fit, history, steps):
        n = len(history)
        return np.array([np.median(self._values_at(fit, history, n + h)) for h in range(1, steps + 1)])

    def marginal(self, spec, fit, history, step, path):
        return histogram_density(self._values_at(fit, history, len(history) + step), spec.bin_grid)

    def sample_paths(self, spec, fit, history, path, rng):
        n = len(history)
        cols = [rng.choice(self._values_at(fit, history, n + h), size=N_TRAJECTORIES)
                for h in range(1, path.size + 1)]
        return np.column_stack(cols) if cols else np.zeros((N_TRAJECTORIES, 0))


def _weight_choices(spec, key, step):
    fixed = spec.hp(key)
    if fixed is not None:
        return np.array([float(fixed)])
    return np.round(np.arange(0.0, 1.0 + step / 2, step), 10)


def _hw_run(y, observed, L, alpha, beta, gamma, start):
    """Additive Holt-Winters recursions run in parallel for arrays of weights.

    Level and trend start from the first two cycles beginning at ``start``;
    unobserved (held-out) points advance the state without updating it.
    Returns ``(sse, count, level, trend, seasonals)``.
    """
    m = alpha.size
    c1 = y[start:start + L]
    c2 = y[start + L:start + 2 * L]
    lev = np.full(m, c1.mean())
    tr = np.full(m, (c2.mean() - c1.mean()) / L)
    seas = np.tile(c1 - c1.mean(), (m, 1))
    sse = np.zeros(m)
    count = 0
    for t in range(start + L, y.size):
        slot = (t - start) % L
        s_old = seas[:, slot]
        if observed[t]:
            err = y[t] - (lev + tr + s_old)
            sse += err * err
            count += 1
            new_lev = alpha * (y[t] - s_old) + (1 - alpha) * (lev + tr)
            tr = beta * (new_lev - lev) + (1 - beta) * tr
            seas[:, slot] = gamma * (y[t] - new_lev) + (1 - gamma) * s_old
            lev = new_lev
        else:
            lev = lev + tr
    return sse, count, lev, tr, seas


@register
class HoltWinters(Family):
    """Additive level/trend/season exponential smoothing.

    Smoothing weights not fixed through hyperparameters are chosen by grid
    search (step ``grid_step``, default 0.05) minimising in-sample one-step SSE.
    """

    name = "holt_winters"

    def check(self, spec):
        for key in ("alpha", "beta", "gamma"):
            v = spec.hp(key)
            if v is not None and not 0 <= float(v) <= 1:
                raise ArgumentError(f"{key} must lie in [0, 1]")
        step = float(spec.hp("grid_step", 0.05))
        if not 0 < step <= 1:
            raise ArgumentError("grid_step must lie in (0, 1]")

    def size(self, spec):
        return 3

    def min_train(self, spec, cycle_length):
        return 2 * cycle_length + 1

    def min_history(self, spec, cycle_length):
        return 2 * cycle_length

    def fit(self, spec, train, holdout):
        y = train.values
        L = train.cycle_length
        observed = np.ones(y.size, dtype=bool)
        for i in holdout:
            if 1 <= i <= y.size:
                observed[i - 1] = False
        # initialise from the first two complete cycles free of held-out points
        start = next((s for s in range(0, y.size - 2 * L + 1) if observed[s:s + 2 * L].all()), None)
        if start is None or start + 2 * L >= y.size:
            raise TrainingError("Holt-Winters needs two uninterrupted cycles plus data to smooth")
        step = float(spec.hp("grid_step", 0.05))
        grid = list(itertools.product(*(_weight_choices(spec, k, step) for k in ("alpha", "beta", "gamma"))))
        a, b, g = (np.array(col) for col in zip(*grid))
        sse, count, *_ = _hw_run(y, observed, L, a, b, g, start)
        if count == 0:
            raise TrainingError("no observations left to score the smoothing weights")
        best = int(np.argmin(sse))  # first minimum wins ties
        params = {"alpha": float(a[best]), "beta": float(b[best]), "gamma": float(g[best])}
        return FitResult(self.name, params, float(sse[best]), math.sqrt(sse[best] / count),
                         True, count)

    def mean_path(self, spec, fit, history, steps):
        y = history.values
        L = history.cycle_length
        p = fit.parameters
        _, _, lev, tr, seas = _hw_run(y, np.ones(y.size, dtype=bool), L, np.array([p["alpha"]]),
                                      np.array([p["beta"]]), np.array([p["gamma"]]), 0)
        n = y.size
        h = np.arange(1, steps + 1)
        slots = (n - 1 + h) % L
        return lev[0] + h * tr[0] + seas[0, slots]


def _harmonics(series: TimeSeries, idx: np.ndarray, k: int) -> np.ndarray:
    L = series.cycle_length
    s = np.array([season_index(series, int(t)) for t in idx], dtype=float)
    cols = []
    for j in range(1, k + 1):
        cols.append(np.sin(2 * np.pi * j * s / L))
        cols.append(np.cos(2 * np.pi * j * s / L))
    return np.column_stack(cols) if cols else np.zeros((idx.size, 0))


@register
class SeasonalAR(Family):
    """Least-squares regression of ``y_t`` on ``p`` lags plus Fourier terms of the cycle.

    Hyperparameters: ``p`` (lag order), ``harmonics`` (default 1) and
    ``burn_in`` (first response index minus one, default ``p``).  Giving
    nested models the same ``burn_in`` puts them on an identical fit set.
    """

    name = "seasonal_ar"

    def check(self, spec):
        p = int(spec.hp("p", 1))
        if p < 0 or int(spec.hp("harmonics", 1)) < 0:
            raise ArgumentError("p and harmonics must be non-negative")
        if int(spec.hp("burn_in", p)) < p:
            raise ArgumentError("burn_in must be >= p")

    def size(self, spec):
        return int(spec.hp("p", 1))

    def _dims(self, spec):
        p = int(spec.hp("p", 1))
        return p, int(spec.hp("harmonics", 1)), int(spec.hp("burn_in", p))

    def min_train(self, spec, cycle_length):
        p, k, burn = self._dims(spec)
        return max(2 * cycle_length, burn + 1 + p + 2 * k + 1)

    def min_history(self, spec, cycle_length):
        return self._dims(spec)[0]

    def fit(self, spec, train, holdout):
        p, k, burn = self._dims(spec)
        y = train.values
        rows = []
        for t in range(burn + 1, y.size + 1):
            if t in holdout or any((t - j) in holdout for j in range(1, p + 1)):
                continue
            rows.append(t)
        rows = np.array(rows, dtype=int)
        n_par = 1 + p + 2 * k
        if rows.size <= n_par:
            raise TrainingError(f"{rows.size} usable rows for {n_par} coefficients")
        X = np.column_stack([np.ones(rows.size)]
                            + [y[rows - 1 - j] for j in range(1, p + 1)]
                            + [_harmonics(train, rows, k)])
        coef, *_ = np.linalg.lstsq(X, y[rows - 1], rcond=None)
        resid = y[rows - 1] - X @ coef
        sse = float(resid @ resid)
        names = ["intercept"] + [f"lag_{j}" for j in range(1, p + 1)]
        names += [f"{fn}_{j}" for j in range(1, k + 1) for fn in ("sin", "cos")]
        return FitResult(self.name, dict(zip(names, map(float, coef))), sse,
                         math.sqrt(sse / (rows.size - n_par)), True, int(rows.size))

    def variance_scale(self, steps):
        return np.asarray(steps, dtype=float)

    def mean_path(self, spec, fit, history, steps):
        p, k, _ = self._dims(spec)
        par = fit.parameters
        lags = np.array([par[f"lag_{j}"] for j in range(1, p + 1)])
        n = len(history)
        future = np.arange(n + 1, n + steps + 1)
        seasonal = par["intercept"] + _harmonics(history, future, k) @ np.array(
            [par[f"{fn}_{j}"] for j in range(1, k + 1) for fn in ("sin", "cos")]).reshape(-1)
        buf = list(history.values[n - p:]) if p else []
        out = np.empty(steps)
        for h in range(steps):
            val = seasonal[h] + (float(np.dot(lags, buf[::-1][:p])) if p else 0.0)
            out[h] = val
            if p:
                buf.append(val)
        return out

    def sample_paths(self, spec, fit, history, path, rng):
        # cumulative shocks: step h has variance h * sd^2, matching the marginals
        eps = rng.standard_normal((N_TRAJECTORIES, path.size))
        return np.maximum(path + fit.residual_sd * np.cumsum(eps, axis=1), 0.0)
