"""Fractional Brownian motion and fractional Gaussian noise.

Covariance functions, exact simulation by circulant embedding
(Davies-Harte) with a dense Cholesky fallback, and Hurst exponent
estimation by first-order detrended fluctuation analysis (DFA).

Random numbers come from numpy's PCG64 bit generator seeded through
``numpy.random.SeedSequence``; the same ``(n, H, seed)`` triple always
reproduces the same sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FgnSample",
    "check_hurst",
    "fbm_covariance",
    "fgn_autocovariance",
    "simulate_fgn",
    "cumulate_to_fbm",
    "estimate_hurst_dfa",
    "dfa_fluctuation",
    "DFA_MIN_LENGTH",
    "HURST_CLAMP",
]

DFA_MIN_LENGTH = 128
HURST_CLAMP = (0.01, 0.99)


def check_hurst(H: float) -> float:
    H = float(H)
    if not (0.0 < H < 1.0) or not np.isfinite(H):
        raise ValueError(f"Hurst exponent must lie in (0, 1), got {H!r}")
    return H


@dataclass(frozen=True)
class FgnSample:
    """Unit-variance fractional Gaussian noise increments."""

    values: np.ndarray
    hurst: float
    seed: int

    def __len__(self) -> int:
        return len(self.values)


def fbm_covariance(s, t, H: float):
    """Covariance ``E[B_s B_t]`` of standard fractional Brownian motion.

    Accepts scalars or broadcastable arrays.
    """
    H = check_hurst(H)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("fBm covariance is defined for nonnegative times only")
    two_h = 2.0 * H
    out = 0.5 * (t**two_h + s**two_h - np.abs(t - s) ** two_h)
    return out[()] if out.ndim == 0 else out


def fgn_autocovariance(k, H: float):
    """Autocovariance of unit-spacing fGn at integer lag(s) ``k``."""
    H = check_hurst(H)
    k = np.asarray(k)
    if np.any(k < 0):
        raise ValueError("lag must be nonnegative")
    k = np.abs(k.astype(float))
    two_h = 2.0 * H
    out = 0.5 * ((k + 1.0) ** two_h - 2.0 * k**two_h + np.abs(k - 1.0) ** two_h)
    return out[()] if out.ndim == 0 else out


def _circulant_eigenvalues(n: int, H: float) -> np.ndarray:
    gamma = fgn_autocovariance(np.arange(n + 1), H)
    # first row of the 2n circulant: g0..gn, g(n-1)..g1
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    return np.fft.rfft(row).real, row.size


def _davies_harte(n: int, H: float, rng: np.random.Generator) -> np.ndarray | None:
    eig, m = _circulant_eigenvalues(n, H)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(eig))))
    if np.any(eig < -tol):
        return None
    eig = np.clip(eig, 0.0, None)
    # Hermitian-symmetric complex Gaussian vector for a real output of length m
    half = m // 2
    w = np.empty(half + 1, dtype=complex)
    w[0] = rng.standard_normal() * np.sqrt(eig[0] / m)
    w[half] = rng.standard_normal() * np.sqrt(eig[half] / m)
    re = rng.standard_normal(half - 1)
    im = rng.standard_normal(half - 1)
    w[1:half] = (re + 1j * im) * np.sqrt(eig[1:half] / (2.0 * m))
    x = np.fft.irfft(w, n=m) * m
    return x[:n]


def _dense_cholesky(n: int, H: float, rng: np.random.Generator) -> np.ndarray:
    lags = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    cov = fgn_autocovariance(lags, H)
    chol = np.linalg.cholesky(cov)
    return chol @ rng.standard_normal(n)


def simulate_fgn(n: int, H: float, seed: int) -> FgnSample:
    """Draw ``n`` exact fractional Gaussian noise values.

    Parameters
    ----------
    n : int
        Number of increments, ``n >= 1``.
    H : float
        Hurst exponent in (0, 1).
    seed : int
        Seed for ``numpy.random.default_rng`` (PCG64).

    Returns
    -------
    FgnSample
        Zero-mean unit-variance Gaussian values with covariance
        ``fgn_autocovariance(|i - j|, H)``.

    Notes
    -----
    Circulant embedding of size ``2n`` is exact whenever its eigenvalues
    are nonnegative. Otherwise the sample is drawn from the Cholesky
    factor of the dense ``n x n`` covariance.
    """
    H = check_hurst(H)
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if n == 1:
        values = rng.standard_normal(1)
    else:
        values = _davies_harte(n, H, rng)
        if values is None:
            try:
                values = _dense_cholesky(n, H, np.random.default_rng(seed))
            except np.linalg.LinAlgError as exc:  # pragma: no cover - covariance is PD
                raise RuntimeError(
                    f"fGn simulation failed for n={n}, H={H}: embedding and Cholesky both failed"
                ) from exc
    return FgnSample(values=np.asarray(values, dtype=float), hurst=H, seed=int(seed))


def cumulate_to_fbm(sample) -> np.ndarray:
    """Prefix sums of fGn increments, i.e. a discrete fBm path with ``B_0 = 0`` implied."""
    values = sample.values if isinstance(sample, FgnSample) else np.asarray(sample, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    return np.cumsum(values)


def _box_sizes(n: int) -> np.ndarray:
    hi = n // 4
    count = int(np.floor(4 * np.log2(hi / 8.0))) + 1
    sizes = np.unique(np.round(8.0 * 2.0 ** (np.arange(count) / 4.0)).astype(int))
    return sizes[(sizes >= 8) & (sizes <= hi)]


def dfa_fluctuation(values, sizes=None):
    """First-order DFA fluctuation function.

    Returns ``(sizes, F)`` where ``F[j]`` is the RMS of the linearly
    detrended profile over non-overlapping boxes of length ``sizes[j]``.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    sizes = _box_sizes(n) if sizes is None else np.asarray(sizes, dtype=int)
    profile = np.cumsum(x - x.mean())
    fluct = np.empty(sizes.size)
    for j, s in enumerate(sizes):
        nbox = n // s
        boxes = profile[: nbox * s].reshape(nbox, s)
        u = np.arange(s, dtype=float)
        u -= u.mean()
        centered = boxes - boxes.mean(axis=1, keepdims=True)
        slope = centered @ u / (u @ u)
        resid = centered - slope[:, None] * u[None, :]
        fluct[j] = np.sqrt(np.mean(resid**2))
    return sizes, fluct


def estimate_hurst_dfa(values) -> float:
    """Estimate the Hurst exponent of a stationary series by DFA-1.

    Box sizes form a geometric grid from 8 to ``n/4`` with ratio
    ``2**(1/4)``. The log-log slope is clamped to ``[0.01, 0.99]``.

    Raises
    ------
    ValueError
        If fewer than 128 points are given or the series is constant.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size < DFA_MIN_LENGTH:
        raise ValueError(f"DFA needs at least {DFA_MIN_LENGTH} points, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("DFA input contains non-finite values")
    if np.ptp(x) == 0.0 or np.var(x) == 0.0:
        raise ValueError("DFA input is degenerate (zero variance)")
    sizes, fluct = dfa_fluctuation(x)
    if np.any(fluct <= 0):
        raise ValueError("DFA input is degenerate (zero fluctuation)")
    slope = np.polyfit(np.log(sizes), np.log(fluct), 1)[0]
    lo, hi = HURST_CLAMP
    return float(np.clip(slope, lo, hi))
