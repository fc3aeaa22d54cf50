"""Synthetic long-memory signals: fractional Gaussian noise and fractionally
differenced noise.

The fGn generator uses circulant embedding of the exact autocovariance
(Davies–Harte), so sample paths have the true covariance structure up to
floating point; it is the reference signal for Hurst-estimator tests.
"""

from __future__ import annotations

import numpy as np

from .fractional import gl_weights


def fgn_autocovariance(lags: int, hurst: float) -> np.ndarray:
    k = np.arange(lags, dtype=float)
    return 0.5 * (
        np.abs(k + 1.0) ** (2 * hurst)
        + np.abs(k - 1.0) ** (2 * hurst)
        - 2.0 * np.abs(k) ** (2 * hurst)
    )


def fgn(n: int, hurst: float, rng: np.random.Generator, sigma: float = 1.0) -> np.ndarray:
    """Fractional Gaussian noise of length ``n`` with Hurst exponent ``hurst``."""
    if not (0.0 < hurst < 1.0):
        raise ValueError("hurst must lie in (0, 1)")
    if n < 2:
        raise ValueError("need n >= 2")
    gamma = fgn_autocovariance(n, hurst)
    circ = np.concatenate([gamma, [0.0], gamma[1:][::-1]])
    lam = np.fft.fft(circ).real
    # tiny negative eigenvalues from rounding are clipped
    lam = np.maximum(lam, 0.0)
    w = rng.standard_normal(2 * n) + 1j * rng.standard_normal(2 * n)
    x = np.fft.ifft(np.sqrt(lam) * w).real[:n] / np.sqrt(2.0)
    return sigma * x


def fractionally_differenced_noise(
    n: int, alpha: float, rng: np.random.Generator, sigma: float = 1.0
) -> np.ndarray:
    """Series x with order-``alpha`` fractional difference equal to white noise.

    Generated by the lag recursion x[k] = e[k] - sum_{j>=1} psi(alpha, j) x[k-j];
    its wavelet log2-variance slope across dyadic levels is 2*alpha.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    w = gl_weights(alpha, n - 1)
    e = sigma * rng.standard_normal(n)
    x = np.zeros(n)
    for k in range(n):
        x[k] = e[k] - np.dot(w[1 : k + 1], x[k - 1 :: -1][:k])
    return x
