"""Model estimation from episode data.

Two stages: the fractional exponents come from the slope of log2 wavelet-detail
variance against dyadic level (Haar transform), and the linear parameters
(A, B, mu, Sigma) come from ordinary least squares on the fractionally
differenced one-step targets.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import EpisodeDataset, FracModel, validate_alphas
from .fractional import frac_difference_series


class SeriesTooShortError(ValueError):
    pass


class DegenerateSeriesError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class HurstFit:
    """Wavelet-variance regression result and the derived exponents."""

    scales: tuple[int, ...]
    log2_variances: tuple[float, ...]
    slope: float
    hurst: float
    alpha: float

    def points(self) -> list[dict]:
        return [
            {"level": s, "log2var": v} for s, v in zip(self.scales, self.log2_variances)
        ]


def haar_detail_coefficients(series) -> list[np.ndarray]:
    """Orthonormal Haar detail coefficients per level (level 1 = finest).

    Non-dyadic lengths are truncated to the largest dyadic prefix to avoid
    boundary-padding bias.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if x.shape[0] < 2:
        raise SeriesTooShortError("need at least 2 samples for one Haar level")
    n = 1 << int(np.floor(np.log2(x.shape[0])))
    approx = x[:n].copy()
    details = []
    while approx.shape[0] >= 2:
        even, odd = approx[0::2], approx[1::2]
        details.append((even - odd) / np.sqrt(2.0))
        approx = (even + odd) / np.sqrt(2.0)
    return details


def wavelet_variances(series) -> tuple[list[int], list[float]]:
    """Variance of Haar detail coefficients at dyadic levels 1..log2(N)-2.

    Detail coefficients are zero-mean by construction, so the variance is the
    mean of squares.
    """
    x = np.asarray(series, dtype=float)
    if x.shape[0] < 16:
        raise SeriesTooShortError(f"need at least 16 samples, got {x.shape[0]}")
    details = haar_detail_coefficients(x)
    levels = list(range(1, len(details) - 1))
    return levels, [float(np.mean(details[lv - 1] ** 2)) for lv in levels]


def _variances_to_fit(levels, variances) -> HurstFit:
    var = np.asarray(variances, dtype=float)
    if np.any(var <= 0.0):
        raise DegenerateSeriesError(
            "zero wavelet variance at some level; series has no usable fluctuations"
        )
    lv = np.log2(var)
    x = np.asarray(levels, dtype=float)
    design = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(design, lv, rcond=None)
    slope = float(coef[1])
    hurst = (slope + 1.0) / 2.0
    alpha = hurst - 0.5
    if alpha < 0.0 or alpha > 1.0:
        warnings.warn(
            f"estimated fractional exponent {alpha:.3f} outside [0, 1]; clamping",
            stacklevel=3,
        )
        alpha = float(np.clip(alpha, 0.0, 1.0))
    return HurstFit(
        scales=tuple(int(v) for v in levels),
        log2_variances=tuple(float(v) for v in lv),
        slope=slope,
        hurst=hurst,
        alpha=alpha,
    )


def estimate_hurst(series) -> HurstFit:
    """Hurst exponent from the log2 variance-vs-level slope.

    The regression uses levels 2..log2(N)-2: the finest level is
    noise-dominated and the two coarsest levels have too few coefficients.
    """
    x = np.asarray(series, dtype=float)
    if x.shape[0] < 64:
        raise SeriesTooShortError(f"need at least 64 samples, got {x.shape[0]}")
    details = haar_detail_coefficients(x)
    levels = list(range(2, len(details) - 1))
    variances = [float(np.mean(details[lv - 1] ** 2)) for lv in levels]
    return _variances_to_fit(levels, variances)


def estimate_hurst_pooled(series_list) -> HurstFit:
    """Hurst fit with detail coefficients pooled across several series.

    Each series is transformed separately, so no wavelet window ever spans a
    series boundary; coefficients are pooled per level before taking variances.
    """
    pools: dict[int, list[np.ndarray]] = {}
    max_levels = 0
    total = 0
    for s in series_list:
        x = np.asarray(s, dtype=float)
        total += x.shape[0]
        if x.shape[0] < 4:
            continue
        details = haar_detail_coefficients(x)
        max_levels = max(max_levels, len(details))
        for lv, d in enumerate(details, start=1):
            pools.setdefault(lv, []).append(d)
    if total < 64 or max_levels < 4:
        raise SeriesTooShortError(
            f"need at least 64 pooled samples across episodes, got {total}"
        )
    levels = list(range(2, max_levels - 1))
    variances = [
        float(np.mean(np.concatenate(pools[lv]) ** 2)) for lv in levels if lv in pools
    ]
    levels = [lv for lv in levels if lv in pools]
    if len(levels) < 2:
        raise SeriesTooShortError("too few usable wavelet levels across episodes")
    return _variances_to_fit(levels, variances)


def fit_linear_params(
    data: EpisodeDataset, alphas, truncation: int | None = None
) -> FracModel:
    """Least-squares fit of (A, B, mu) given fixed fractional exponents.

    For each dimension i the regression target is the order-alpha_i difference
    of s_i[k+1], computed per episode so lags never cross episode boundaries;
    regressors are (s[k], a[k], 1).  Sigma is the empirical covariance of the
    residuals.
    """
    if len(data) == 0:
        raise InsufficientDataError("dataset is empty")
    n, p = data.episodes[0].n, data.episodes[0].p
    alphas = validate_alphas(alphas, n)
    needed = n + p + 1
    if data.total_transitions < needed:
        raise InsufficientDataError(
            f"need at least {needed} transitions to fit {n}+{p}+1 parameters per "
            f"dimension, got {data.total_transitions}"
        )
    rows = []
    targets = []
    for ep in data.episodes:
        K = ep.transitions
        z = np.empty((K, n))
        for i in range(n):
            # z_i[k] = GL difference of s_i at index k+1, over that episode only
            z[:, i] = frac_difference_series(ep.states[:, i], alphas[i], truncation)[1 : K + 1]
        rows.append(np.hstack([ep.states[:K], ep.actions, np.ones((K, 1))]))
        targets.append(z)
    X = np.vstack(rows)
    Z = np.vstack(targets)
    coef, *_ = np.linalg.lstsq(X, Z, rcond=None)
    A = coef[:n].T
    B = coef[n : n + p].T
    mu = coef[n + p]
    resid = Z - X @ coef
    Sigma = resid.T @ resid / resid.shape[0]
    Sigma = 0.5 * (Sigma + Sigma.T)
    return FracModel(alphas=alphas, A=A, B=B, mu=mu, Sigma=Sigma)


def estimate_model(data: EpisodeDataset, truncation: int | None = None) -> FracModel:
    """Full estimation: per-dimension exponents from wavelet variances, then
    least squares for the linear part.  Deterministic for fixed input."""
    if len(data) == 0:
        raise InsufficientDataError("dataset is empty")
    n = data.episodes[0].n
    alphas = np.empty(n)
    for i in range(n):
        fit = estimate_hurst_pooled([ep.states[:, i] for ep in data.episodes])
        alphas[i] = fit.alpha
    return fit_linear_params(data, alphas, truncation)
