"""Kermack-McKendrick SIR model: RK4 integration, simulation and least-squares fitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np
from scipy.optimize import minimize

from ..errors import ArgumentError, TrainingError
from ..series import TimeSeries
from .base import Family, FitResult, register


@dataclass(frozen=True)
class SIRState:
    S: float
    I: float
    R: float
    N: float
    beta: float
    gamma: float

    def __post_init__(self):
        if min(self.S, self.I, self.R) < 0 or not self.N > 0:
            raise ArgumentError("compartments must be non-negative and N positive")
        if abs(self.S + self.I + self.R - self.N) > 1e-9 * max(1.0, self.N):
            raise ArgumentError(f"S+I+R={self.S + self.I + self.R} differs from N={self.N}")
        if self.beta < 0 or self.gamma < 0:
            raise ArgumentError("beta and gamma must be non-negative")

    @property
    def growing(self) -> bool:
        """Whether infections increase right now (effective reproduction number above 1)."""
        return self.beta * self.S > self.gamma * self.N


def _deriv(S, I, beta, gamma, N):
    flow = beta * S * I / N
    rec = gamma * I
    return -flow, flow - rec, rec


def sir_step(state: SIRState, dt: float) -> SIRState:
    """One classical Runge-Kutta step of length ``dt``.

    S and R take their RK4 increments directly (so S never rises and R never
    falls); I is recovered as ``N - S - R``, which holds the population total
    to rounding instead of letting three rounded sums drift apart.
    """
    if not dt > 0:
        raise ArgumentError("dt must be positive")
    b, g, N = state.beta, state.gamma, state.N
    S, I, R = state.S, state.I, state.R
    k1 = _deriv(S, I, b, g, N)
    k2 = _deriv(S + dt / 2 * k1[0], I + dt / 2 * k1[1], b, g, N)
    k3 = _deriv(S + dt / 2 * k2[0], I + dt / 2 * k2[1], b, g, N)
    k4 = _deriv(S + dt * k3[0], I + dt * k3[1], b, g, N)
    S2 = max(S + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]), 0.0)
    R2 = min(R + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]), N - S2)
    return replace(state, S=S2, I=max(N - S2 - R2, 0.0), R=R2)


@numba.njit(cache=True)
def _incidence_kernel(beta, gamma, N, I0, n_intervals, substeps):
    # same RK4 scheme as sir_step, compiled for the fitting loop
    S = N - I0
    I = I0
    dt = 1.0 / substeps
    out = np.empty(n_intervals)
    for t in range(n_intervals):
        s_prev = S
        for _ in range(substeps):
            f1 = beta * S * I / N
            a_s, a_i = -f1, f1 - gamma * I
            S2, I2 = S + 0.5 * dt * a_s, I + 0.5 * dt * a_i
            f2 = beta * S2 * I2 / N
            b_s, b_i = -f2, f2 - gamma * I2
            S3, I3 = S + 0.5 * dt * b_s, I + 0.5 * dt * b_i
            f3 = beta * S3 * I3 / N
            c_s, c_i = -f3, f3 - gamma * I3
            S4, I4 = S + dt * c_s, I + dt * c_i
            f4 = beta * S4 * I4 / N
            d_s, d_i = -f4, f4 - gamma * I4
            S = max(S + dt / 6.0 * (a_s + 2 * b_s + 2 * c_s + d_s), 0.0)
            I = max(I + dt / 6.0 * (a_i + 2 * b_i + 2 * c_i + d_i), 0.0)
        out[t] = s_prev - S
    return out


def sir_incidence(beta: float, gamma: float, N: float, I0: float, n_intervals: int,
                  substeps: int = 10) -> np.ndarray:
    """New infections (drop in S) per unit interval, starting from ``S = N - I0``."""
    return _incidence_kernel(float(beta), float(gamma), float(N), float(I0), int(n_intervals),
                             int(substeps))


def simulate_sir(params: SIRState, T: int, noise_sd: float = 0.0, seed: int = 0,
                 substeps: int = 10, location_id: str = "sim") -> TimeSeries:
    """Incidence series ``S(t-1) - S(t)`` with optional multiplicative log-normal noise."""
    if T < 1:
        raise ArgumentError("T must be >= 1")
    if noise_sd < 0:
        raise ArgumentError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    state = params
    dt = 1.0 / substeps
    inc = np.empty(T)
    for t in range(T):
        s_prev = state.S
        for _ in range(substeps):
            state = sir_step(state, dt)
        inc[t] = s_prev - state.S
    if noise_sd > 0:
        inc = inc * np.exp(noise_sd * rng.standard_normal(T))
    return TimeSeries(location_id, np.maximum(inc, 0.0))


def _objective(theta, y, N, substeps):
    beta, gamma, i0 = np.exp(theta)
    if i0 >= N:
        return 1e300
    r = sir_incidence(beta, gamma, N, i0, y.size, substeps) - y
    return float(r @ r)


@register
class SIRFamily(Family):
    """SIR fitted to incidence by multistart Nelder-Mead over log(beta, gamma, I0).

    Requires hyperparameter ``population``.  Optional ``substeps`` (RK4 steps
    per interval, default 10) and grid ranges ``beta_range``, ``gamma_range``.
    """

    name = "sir"

    def check(self, spec):
        pop = spec.hp("population")
        if pop is None or not float(pop) > 0:
            raise ArgumentError("sir needs a positive 'population' hyperparameter")
        if int(spec.hp("substeps", 10)) < 1:
            raise ArgumentError("substeps must be >= 1")

    def size(self, spec):
        return 3

    def fit(self, spec, train, holdout):
        if holdout:
            raise TrainingError("sir describes a single epidemic and cannot skip held-out seasons")
        y = np.asarray(train.values, dtype=float)
        N = float(spec.hp("population"))
        sub = int(spec.hp("substeps", 10))
        scale = max(1.0, float(y @ y))
        first = max(y[0], 1.0)
        betas = np.geomspace(*spec.hp("beta_range", (0.05, 2.0)), 5)
        gammas = np.geomspace(*spec.hp("gamma_range", (0.02, 1.0)), 5)
        i0s = np.minimum(np.geomspace(first / 10, first * 10, 5), N / 2)
        best = None
        any_converged = False
        for b in betas:
            for g in gammas:
                for i0 in i0s:
                    x0 = np.log([b, g, i0])
                    res = minimize(_objective, x0, args=(y, N, sub), method="Nelder-Mead",
                                   options={"xatol": 1e-8, "fatol": 1e-14 * scale,
                                            "maxiter": 2000, "maxfev": 4000})
                    any_converged |= bool(res.success)
                    # strict < keeps the lowest-index start on ties
                    if best is None or res.fun < best.fun:
                        best = res
        beta, gamma, i0 = (float(v) for v in np.exp(best.x))
        sse = float(best.fun)
        return FitResult(self.name, {"beta": beta, "gamma": gamma, "I0": i0, "population": N},
                         sse, math.sqrt(sse / y.size), any_converged, int(y.size))

    def mean_path(self, spec, fit, history, steps):
        p = fit.parameters
        n = len(history)
        inc = sir_incidence(p["beta"], p["gamma"], p["population"], p["I0"], n + steps,
                            int(spec.hp("substeps", 10)))
        return inc[n:]
