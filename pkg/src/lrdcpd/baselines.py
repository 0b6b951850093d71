"""Comparison procedures: EWMA-Threshold, EWMA-CUSUM and the SSA subspace method.

EWMA recursions, with smoothing factor ``alpha`` and ``d_t = X_t - mu_{t-1}``::

    mu_t  = mu_{t-1} + alpha d_t
    var_t = (1 - alpha) (var_{t-1} + alpha d_t^2)

started at ``mu_0 = X_0``, ``var_0 = 0``. Residuals are
``R_t = (X_t - mu_t) / sigma_t``; a zero ``sigma_t`` yields ``R_t = 0``.

The subspace method embeds a series into an ``L x K`` Hankel
(trajectory) matrix, keeps the top ``r`` left singular vectors as the
"normal" subspace and scores each trailing window by the norm of its
projection onto the orthogonal complement.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from .detectors import statistic_trajectory

__all__ = [
    "EwmaState",
    "EwmaResult",
    "ewma_filter",
    "ewma_update",
    "ewma_threshold_statistic",
    "ewma_cusum_statistic",
    "SsaModel",
    "ssa_fit",
    "pca_residual_statistic",
    "ssa_trend",
    "ssa_forecast_one_ahead",
    "lrf_coefficients",
    "grid_search",
    "SMOOTHING_GRID",
    "CUSUM_DELTA_GRID",
    "THRESHOLD_H_GRID",
    "THRESHOLD_WINDOW_GRID",
    "SSA_WINDOW",
]

SMOOTHING_GRID = (0.01, 0.05, 0.1, 0.3)
CUSUM_DELTA_GRID = tuple(np.arange(1, 11) * 0.5)
THRESHOLD_H_GRID = (1.0, 1.5, 2.0, 2.5, 3.0)
THRESHOLD_WINDOW_GRID = (5, 10, 20, 40)
SSA_WINDOW = 288
SSA_MASS = 0.9
SSA_MAX_RANK = 10


# --------------------------------------------------------------------------- #
# EWMA


@dataclass(frozen=True)
class EwmaState:
    mean: float
    variance: float
    smoothing: float

    def __post_init__(self):
        if not 0.0 < self.smoothing < 1.0:
            raise ValueError("smoothing factor must lie in (0, 1)")
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")


def ewma_update(state: EwmaState | None, x: float, smoothing: float = 0.05) -> EwmaState:
    if state is None:
        return EwmaState(mean=float(x), variance=0.0, smoothing=smoothing)
    a = state.smoothing
    d = float(x) - state.mean
    return EwmaState(
        mean=state.mean + a * d,
        variance=(1.0 - a) * (state.variance + a * d * d),
        smoothing=a,
    )


@dataclass(frozen=True)
class EwmaResult:
    mean: np.ndarray
    sigma: np.ndarray
    residuals: np.ndarray
    zero_scale_count: int


def ewma_filter(series, smoothing: float = 0.05) -> EwmaResult:
    """Run the EWMA mean/variance recursions over a whole series.

    Both recursions are first-order linear filters, evaluated with
    :func:`scipy.signal.lfilter`; :func:`ewma_update` is the one-step form.
    """
    if not 0.0 < smoothing < 1.0:
        raise ValueError("smoothing factor must lie in (0, 1)")
    x = np.asarray(getattr(series, "values", series), dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("expected a nonempty 1-D series")
    a = smoothing
    den = [1.0, -(1.0 - a)]
    # filter deviations from X_0 so a constant series stays exactly constant
    xc = x - x[0]
    mean_c = np.zeros_like(x)
    var = np.zeros_like(x)
    if x.size > 1:
        mean_c[1:] = lfilter([a], den, xc[1:])
        d = xc[1:] - mean_c[:-1]
        var[1:] = lfilter([(1.0 - a) * a], den, d * d)
    mean = mean_c + x[0]
    sigma = np.sqrt(np.maximum(var, 0.0))
    zero = sigma <= 0.0
    resid = np.zeros_like(x)
    np.divide(xc - mean_c, sigma, out=resid, where=~zero)
    return EwmaResult(mean=mean, sigma=sigma, residuals=resid, zero_scale_count=int(zero.sum()))


def ewma_threshold_statistic(series, h: float = 2.0, window: int = 10, smoothing: float = 0.05) -> np.ndarray:
    """Count of residuals ``R_i >= h`` over the inclusive window ``[k - window, k]``."""
    window = int(window)
    if window < 1:
        raise ValueError("window must be >= 1")
    r = ewma_filter(series, smoothing).residuals
    hits = np.concatenate([[0.0], np.cumsum(r >= h, dtype=float)])
    k = np.arange(r.size)
    lo = np.maximum(k - window, 0)
    return hits[k + 1] - hits[lo]


def ewma_cusum_statistic(series, delta: float = 1.0, smoothing: float = 0.05) -> np.ndarray:
    """CUSUM of ``delta (R_t - delta / 2)`` on EWMA residuals."""
    r = ewma_filter(series, smoothing).residuals
    return statistic_trajectory("cusum", r, delta=delta)


def grid_search(score, grid: dict):
    """Maximise ``score(**params)`` over the Cartesian product of ``grid``.

    Ties keep the first combination in iteration order, so the result is
    deterministic. Returns ``(best_params, best_score)``.
    """
    keys = list(grid)
    best, best_score = None, -np.inf
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, combo))
        s = score(**params)
        if s > best_score:
            best, best_score = params, s
    return best, best_score


# --------------------------------------------------------------------------- #
# SSA / PCA


@dataclass(frozen=True)
class SsaModel:
    window: int
    rank: int
    basis: np.ndarray
    singular_values: np.ndarray

    def __post_init__(self):
        if not 1 <= self.rank < self.window:
            raise ValueError("rank must satisfy 1 <= r < L")
        if self.basis.shape != (self.window, self.rank):
            raise ValueError("basis must have shape (L, r)")

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def explained_mass(self, r: int | None = None) -> float:
        s2 = self.singular_values**2
        return float(s2[: (self.rank if r is None else r)].sum() / s2.sum())


def _hankel(x: np.ndarray, L: int) -> np.ndarray:
    # columns are consecutive length-L windows
    return sliding_window_view(x, L).T


def ssa_fit(history, window: int = SSA_WINDOW, rank: int | None = None) -> SsaModel:
    """Fit the "normal" subspace from a history series.

    Parameters
    ----------
    history : TimeSeries or array
        At least ``2 * window`` samples.
    window : int
        Embedding length ``L``.
    rank : int, optional
        Subspace dimension. By default the smallest ``r`` whose leading
        singular values hold 90% of the squared mass, capped at 10.
    """
    x = np.asarray(getattr(history, "values", history), dtype=float)
    L = int(window)
    if L < 2:
        raise ValueError("window must be >= 2")
    if x.size < 2 * L:
        raise ValueError(f"history needs at least 2L = {2 * L} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("history contains non-finite values")
    U, s, _ = np.linalg.svd(_hankel(x, L), full_matrices=False)
    if rank is None:
        mass = np.cumsum(s**2) / np.sum(s**2) if s[0] > 0 else np.ones_like(s)
        rank = min(int(np.searchsorted(mass, SSA_MASS) + 1), SSA_MAX_RANK)
    rank = int(rank)
    if rank < 1:
        raise ValueError("rank must be >= 1")
    tol = s[0] * max(_hankel(x, L).shape) * np.finfo(float).eps if s[0] > 0 else 0.0
    numerical = int(np.sum(s > tol))
    cap = min(numerical, L - 1)
    if cap < 1:
        raise ValueError("history is identically zero; no subspace to fit")
    if rank > cap:
        warnings.warn(f"rank {rank} exceeds the numerical rank; reduced to {cap}", RuntimeWarning)
        rank = cap
    return SsaModel(window=L, rank=rank, basis=U[:, :rank].copy(), singular_values=s)


def pca_residual_statistic(model: SsaModel, series) -> np.ndarray:
    """``P_t``: norm of the trailing window's residual-subspace component.

    The first ``L - 1`` entries are NaN (no full window yet).
    """
    x = np.asarray(getattr(series, "values", series), dtype=float)
    L = model.window
    out = np.full(x.size, np.nan)
    if x.size < L:
        return out
    W = sliding_window_view(x, L)  # (n - L + 1, L)
    coef = W @ model.basis
    resid = W - coef @ model.basis.T
    out[L - 1 :] = np.linalg.norm(resid, axis=1)
    return out


def ssa_trend(model: SsaModel, series) -> np.ndarray:
    """Rank-``r`` reconstruction by projection and diagonal averaging."""
    x = np.asarray(getattr(series, "values", series), dtype=float)
    L = model.window
    if x.size < L:
        raise ValueError("series shorter than the embedding window")
    X = _hankel(x, L)
    Xr = model.basis @ (model.basis.T @ X)
    K = X.shape[1]
    # anti-diagonal i + j = t
    idx = np.add.outer(np.arange(L), np.arange(K)).ravel()
    total = np.bincount(idx, weights=Xr.ravel(), minlength=x.size)
    count = np.bincount(idx, minlength=x.size)
    return total / count


def lrf_coefficients(model: SsaModel) -> np.ndarray:
    """Linear recurrence ``x_t = sum_j c_j x_{t-L+1+j}`` of the subspace."""
    pi = model.basis[-1, :]
    nu2 = float(pi @ pi)
    if nu2 >= 1.0 - 1e-12:
        raise ValueError("verticality coefficient is 1; the subspace admits no recurrence")
    return model.basis[:-1, :] @ pi / (1.0 - nu2)


def ssa_forecast_one_ahead(model: SsaModel, series) -> np.ndarray:
    """Recurrent one-step forecast of ``X_t`` from the previous ``L - 1`` observations.

    Entries ``t < L - 1`` are NaN.
    """
    x = np.asarray(getattr(series, "values", series), dtype=float)
    c = lrf_coefficients(model)
    m = c.size
    out = np.full(x.size, np.nan)
    if x.size <= m:
        return out
    W = sliding_window_view(x[:-1], m)
    out[m:] = W @ c
    return out
