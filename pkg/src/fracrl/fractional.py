"""Grünwald–Letnikov fractional differencing and one-step prediction.

The discrete fractional difference of order ``alpha`` at index ``k`` is

    diff(x, alpha)[k] = sum_{j=0..k} psi(alpha, j) x[k-j],

where the weights follow the multiplicative recurrence ``psi(alpha, 0) = 1``,
``psi(alpha, j) = psi(alpha, j-1) (j - 1 - alpha) / j``.  The recurrence is the
ratio form of gamma-function quotients and stays finite where the individual
gamma factors have poles, so weights are never computed from gamma calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FracModel, StateTrajectory, validate_alphas


def gl_weights(alpha: float, horizon: int) -> np.ndarray:
    """Weights psi(alpha, j) for j = 0..horizon."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    if horizon == 0:
        return np.ones(1)
    j = np.arange(1, horizon + 1, dtype=float)
    # cumulative product applies the recurrence psi_j = psi_{j-1} (j-1-alpha)/j
    # in the same sequential order as a scalar loop
    return np.concatenate(([1.0], np.cumprod((j - 1.0 - alpha) / j)))


def psi_weight(alpha: float, j: int) -> float:
    """Single differencing weight psi(alpha, j)."""
    if j < 0:
        raise ValueError("j must be non-negative")
    return float(gl_weights(alpha, j)[j])


@dataclass(frozen=True)
class GlWeightTable:
    """Per-dimension weight rows; row i holds psi(alpha_i, j) for j = 0..horizon."""

    weights: np.ndarray
    horizon: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[1] != self.horizon + 1:
            raise ValueError("weights must have horizon+1 columns")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def row(self, i: int) -> np.ndarray:
        return self.weights[i]


def build_weight_table(alphas, horizon: int) -> GlWeightTable:
    alphas = validate_alphas(alphas)
    rows = np.vstack([gl_weights(a, horizon) for a in alphas])
    return GlWeightTable(weights=rows, horizon=horizon)


def frac_difference(series, alpha: float, k: int, truncation: int | None = None) -> float:
    """GL fractional difference of a scalar series at index ``k``.

    ``truncation`` caps the number of lag terms (weights beyond it dropped,
    no renormalization); by default the sum runs over the whole history.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if not (0 <= k < x.shape[0]):
        raise IndexError(f"index {k} out of range for series of length {x.shape[0]}")
    jmax = k if truncation is None else min(k, truncation)
    w = gl_weights(alpha, jmax)
    return float(np.dot(w, x[k::-1][: jmax + 1]))


def frac_difference_series(series, alpha: float, truncation: int | None = None) -> np.ndarray:
    """GL fractional difference at every index of a scalar series."""
    x = np.asarray(series, dtype=float)
    m = x.shape[0]
    jmax = m - 1 if truncation is None else min(m - 1, truncation)
    w = gl_weights(alpha, jmax)
    # full convolution index m picks up sum_j w[j] x[m-j], exactly the GL sum
    return np.convolve(x, w)[:m]


def predict_mean(
    model: FracModel,
    history,
    action,
    k: int | None = None,
    truncation: int | None = None,
) -> np.ndarray:
    """Conditional mean of s[k+1] given states s[0..k] and action a[k].

    All lagged weight terms of the order-alpha difference of s[k+1] are moved
    to the right-hand side of the linear update, so lags enter negated:

        mean_i = -sum_{j=1..k+1} psi(alpha_i, j) s_i[k+1-j]
                 + A[i] @ s[k] + B[i] @ a[k] + mu_i.
    """
    states = history.states if isinstance(history, StateTrajectory) else np.atleast_2d(
        np.asarray(history, dtype=float)
    )
    if states.shape[1] != model.n:
        raise ValueError(f"history has dimension {states.shape[1]}, model expects {model.n}")
    if k is None:
        k = states.shape[0] - 1
    if not (0 <= k < states.shape[0]):
        raise IndexError(f"index {k} out of range for history of length {states.shape[0]}")
    a = np.asarray(action, dtype=float).reshape(model.p)

    jmax = k + 1 if truncation is None else min(k + 1, truncation)
    lagged = np.empty(model.n)
    for i in range(model.n):
        w = gl_weights(model.alphas[i], jmax)
        # s_i[k+1-j] for j = 1..jmax is states[k::-1][:jmax] in column i
        lagged[i] = np.dot(w[1:], states[k::-1][:jmax, i])
    return -lagged + model.A @ states[k] + model.B @ a + model.mu
