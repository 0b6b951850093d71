"""Maximum-likelihood polynomial trend filter for fBm noise.

For observations ``X_s = sum_i theta_i s**i + sigma * B^H_s`` on a window
``[0, t]`` the ML drift estimate is ``theta = R_H(t)^{-1} psi_t`` with

    R_H(t)[i, j] = alpha_H(i, j) * t**(i + j - 2H)
    psi_t[i]     = beta_H(i) * int_0^t s**(i-1) dM_s
    M_s          = kappa_H**-1 * int_0^s u**(1/2-H) (s-u)**(1/2-H) dX_u

The constant term cannot be identified from ``dX`` and is anchored to the
first observation of the window (fBm vanishes at the window start).

Quadrature. Both ``M`` and ``psi`` are linear functionals of the path.
Swapping the order of integration turns ``psi_i`` into a single integral
``int_0^t g_i(u) dX_u`` whose weight ``g_i`` is ``u**a (t-u)**a`` times a
polynomial (``a = 1/2 - H``). ``dX`` is taken from a piecewise local
polynomial interpolant of the samples, and each sub-interval is integrated
with Gauss-Legendre nodes, or Gauss-Jacobi nodes on the two sub-intervals
that touch a kernel singularity. The result is exact (to rounding) for
polynomial paths up to the interpolation degree.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
from scipy.special import gammaln, roots_jacobi, roots_legendre

from .lrd_core import DFA_MIN_LENGTH, check_hurst, estimate_hurst_dfa

logger = logging.getLogger(__name__)

__all__ = [
    "FilterCoefficients",
    "DriftEstimate",
    "TrendEstimate",
    "SingularSystemError",
    "compute_coefficients",
    "discretize_martingale",
    "ml_estimate",
    "extract_trend",
    "forecast_one_ahead",
    "DEFAULT_WINDOW",
]

DEFAULT_WINDOW = 144
_QUAD_ORDER = 12
_COND_LIMIT = 1e12


class SingularSystemError(np.linalg.LinAlgError):
    """The ML normal matrix is numerically singular."""


# --------------------------------------------------------------------------- #
# coefficients


@dataclass(frozen=True)
class FilterCoefficients:
    H: float
    lambda_H: float
    kappa_H: float
    beta: np.ndarray  # beta[i - 1] for i = 1..max_degree
    alpha: np.ndarray  # alpha[i - 1, j - 1]

    @property
    def max_degree(self) -> int:
        return self.beta.size

    def R(self, t: float = 1.0) -> np.ndarray:
        """Normal matrix ``R_H(t)`` over indices ``1..max_degree``."""
        idx = np.arange(1, self.max_degree + 1)
        return self.alpha * float(t) ** (idx[:, None] + idx[None, :] - 2.0 * self.H)


def compute_coefficients(H: float, max_degree: int = 3) -> FilterCoefficients:
    """lambda_H, kappa_H, beta_H(i) and alpha_H(i, j) for ``1 <= i, j <= max_degree``.

    Gamma ratios are evaluated through ``gammaln``.
    """
    H = check_hurst(H)
    max_degree = int(max_degree)
    if not 1 <= max_degree <= 6:
        raise ValueError("max_degree must be between 1 and 6")
    lam = 2.0 * H * np.exp(gammaln(3.0 - 2.0 * H) + gammaln(0.5 + H) - gammaln(1.5 - H))
    kappa = 2.0 * H * np.exp(gammaln(1.5 - H) + gammaln(0.5 + H))
    i = np.arange(1, max_degree + 1, dtype=float)
    beta = (
        i
        * (2.0 - 2.0 * H + i - 1.0)
        / (2.0 - 2.0 * H)
        * np.exp(
            gammaln(3.0 - 2.0 * H)
            - gammaln(3.0 - 2.0 * H + i - 1.0)
            + gammaln(1.5 - H + i - 1.0)
            - gammaln(1.5 - H)
        )
    )
    alpha = np.outer(beta, beta) * (2.0 - 2.0 * H) / (i[:, None] + i[None, :] - 2.0 * H) / lam
    coeffs = FilterCoefficients(H=H, lambda_H=float(lam), kappa_H=float(kappa), beta=beta, alpha=alpha)
    if not (np.isfinite(lam) and np.isfinite(kappa) and np.all(np.isfinite(beta)) and np.all(np.isfinite(alpha))):
        raise OverflowError(f"non-finite filter coefficients at H={H}")
    return coeffs


# --------------------------------------------------------------------------- #
# quadrature on a uniform index grid


@lru_cache(maxsize=None)
def _gauss(order: int, alpha: float, beta: float):
    if alpha == 0.0 and beta == 0.0:
        return roots_legendre(order)
    return roots_jacobi(order, alpha, beta)


def _kernel_rule(m: int, a: float, order: int = _QUAD_ORDER):
    """Nodes/weights for ``int_0^m x**a (m-x)**a f(x) dx`` split into unit cells.

    Returns arrays of shape ``(m, order)``; row ``k`` covers ``[k, k+1]``.
    """
    a = float(a)
    nodes = np.empty((m, order))
    weights = np.empty((m, order))
    if m == 1:
        xi, wj = _gauss(order, a, a)
        nodes[0] = 0.5 * (xi + 1.0)
        weights[0] = wj * 2.0 ** (-2.0 * a) * 0.5
        return nodes, weights
    xi, wl = _gauss(order, 0.0, 0.0)
    base = 0.5 * (xi + 1.0)
    nodes[:] = np.arange(m)[:, None] + base[None, :]
    weights[:] = 0.5 * wl[None, :] * nodes**a * (m - nodes) ** a
    # first cell: x**a singular at 0
    xi, wj = _gauss(order, 0.0, a)
    nodes[0] = 0.5 * (xi + 1.0)
    weights[0] = 0.5 * wj * 2.0 ** (-a) * (m - nodes[0]) ** a
    # last cell: (m - x)**a singular at m
    xi, wj = _gauss(order, a, 0.0)
    nodes[-1] = m - 1 + 0.5 * (xi + 1.0)
    weights[-1] = 0.5 * wj * 2.0 ** (-a) * nodes[-1] ** a
    return nodes, weights


@lru_cache(maxsize=None)
def _interp_derivative(degree: int):
    """Map from ``degree + 1`` equispaced samples at 0..degree to monomial
    coefficients of the interpolant's derivative (in local units)."""
    grid = np.arange(degree + 1, dtype=float)
    vinv = np.linalg.inv(np.vander(grid, increasing=True))
    # derivative coefficients: d/dx sum c_r x**r = sum r c_r x**(r-1)
    r = np.arange(1, degree + 1, dtype=float)
    return r[:, None] * vinv[1:, :]  # (degree, degree+1)


def _stencils(m: int, n_points: int, degree: int) -> np.ndarray:
    """Stencil start index for each unit cell ``[k, k+1]``, ``k < m``."""
    k = np.arange(m)
    return np.clip(k - (degree - 1) // 2, 0, n_points - 1 - degree)


def _derivative_matrix(nodes: np.ndarray, starts: np.ndarray, degree: int) -> np.ndarray:
    """``D[k, g, l]``: weight of sample ``starts[k] + l`` in ``X'(nodes[k, g])``."""
    dcoef = _interp_derivative(degree)
    local = nodes - starts[:, None]
    powers = local[..., None] ** np.arange(degree)  # (m, G, degree)
    return powers @ dcoef  # (m, G, degree+1)


def _scatter(cell_weights: np.ndarray, starts: np.ndarray, n_points: int) -> np.ndarray:
    """Accumulate per-cell stencil weights ``(m, degree+1)`` into sample weights."""
    width = cell_weights.shape[1]
    cols = starts[:, None] + np.arange(width)[None, :]
    return np.bincount(cols.ravel(), weights=cell_weights.ravel(), minlength=n_points)


def _check_uniform(times) -> tuple[np.ndarray, float]:
    t = np.asarray(times, dtype=float)
    d = np.diff(t)
    if np.any(d <= 0):
        raise ValueError("window times must be strictly increasing")
    step = float(d.mean())
    if not np.allclose(d, step, rtol=1e-9, atol=0.0):
        raise ValueError("window times must be uniformly spaced")
    return t, step


# --------------------------------------------------------------------------- #
# martingale transform


def _martingale_path(values: np.ndarray, step: float, H: float, degree: int = 3) -> np.ndarray:
    n = values.size
    a = 0.5 - H
    kappa = compute_coefficients(H, 1).kappa_H
    deg = min(degree, n - 1)
    out = np.zeros(n)
    for m in range(1, n):
        nodes, weights = _kernel_rule(m, a)
        starts = _stencils(m, n, deg)
        dmat = _derivative_matrix(nodes, starts, deg)
        cell = np.einsum("kg,kgl->kl", weights, dmat)
        w = _scatter(cell, starts, n)
        out[m] = w @ values
    return out * step ** (2.0 * a) / kappa


def discretize_martingale(window_values, window_times, H: float) -> np.ndarray:
    """Increments of the fundamental martingale ``M^H`` on the window grid.

    Parameters
    ----------
    window_values : array_like
        Observations ``X`` on the window.
    window_times : array_like
        Uniformly spaced, strictly increasing times; shifted internally so
        the window starts at 0.
    H : float
        Hurst exponent.

    Returns
    -------
    numpy.ndarray
        ``M(t_k) - M(t_{k-1})`` for ``k = 1..n-1`` (``M(t_0) = 0``).
    """
    H = check_hurst(H)
    x = np.asarray(window_values, dtype=float)
    if x.size < 5:
        raise ValueError("degenerate window: at least 5 points are required")
    _, step = _check_uniform(window_times)
    if x.size != np.asarray(window_times).size:
        raise ValueError("values and times differ in length")
    return np.diff(_martingale_path(x, step, H))


# --------------------------------------------------------------------------- #
# ML estimate


@lru_cache(maxsize=512)
def _psi_weights(n_points: int, H: float, degree: int) -> np.ndarray:
    """Weights ``W`` with ``psi = W @ X`` on a window of ``n_points`` samples
    normalized to ``[0, 1]``; rows are ``i = 1..degree``."""
    a = 0.5 - H
    m = n_points - 1
    coeffs = compute_coefficients(H, degree)
    interp = min(max(degree, 3), m)
    nodes, weights = _kernel_rule(m, a)
    starts = _stencils(m, n_points, interp)
    dmat = _derivative_matrix(nodes, starts, interp)
    u = nodes / m
    rows = []
    for i in range(1, degree + 1):
        bracket = np.ones_like(u)
        for q in range(i - 1):
            bracket -= (i - 1) * comb(i - 2, q) * u ** (i - 2 - q) * (1.0 - u) ** (q + 1) / (a + q + 1.0)
        cell = np.einsum("kg,kgl->kl", weights * bracket, dmat)
        rows.append(_scatter(cell, starts, n_points))
    W = np.vstack(rows) * (coeffs.beta[:, None] * m ** (-2.0 * a) / coeffs.kappa_H)
    W.setflags(write=False)
    return W


@lru_cache(maxsize=512)
def _solver(n_points: int, H: float, degree: int) -> np.ndarray:
    """``R^{-1} W`` on the normalized window, i.e. the linear map samples -> theta."""
    R = compute_coefficients(H, degree).R(1.0)
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularSystemError(f"R_H is numerically singular (cond={cond:.3g})")
    S = np.linalg.solve(R, _psi_weights(n_points, H, degree))
    S.setflags(write=False)
    return S


@dataclass(frozen=True)
class DriftEstimate:
    """Polynomial ``sum_i theta[i] (t - origin)**i`` fitted on ``window``."""

    theta: np.ndarray
    origin: float
    window: tuple[float, float]

    def __call__(self, t):
        s = np.asarray(t, dtype=float) - self.origin
        return np.polynomial.polynomial.polyval(s, self.theta)

    def recentered(self, origin: float) -> "DriftEstimate":
        """Same polynomial expressed about a new origin."""
        shift = self.origin - float(origin)
        # p(t - o_old) = p((t - o_new) - (o_old - o_new))
        poly = np.polynomial.Polynomial(self.theta)
        moved = poly(np.polynomial.Polynomial([-shift, 1.0]))
        coef = np.zeros_like(self.theta)
        coef[: moved.coef.size] = moved.coef
        return DriftEstimate(theta=coef, origin=float(origin), window=self.window)


def _hurst_key(H: float) -> float:
    return float(np.round(check_hurst(H), 12))


def ml_estimate(window_values, window_times, H: float, degree: int = 3) -> DriftEstimate:
    """ML drift estimate of a polynomial trend in fBm noise on one window.

    ``theta[0]`` is the first observation; ``theta[1:]`` solve
    ``R_H(t) theta = psi_t`` with time measured from the window start.

    Raises
    ------
    ValueError
        Fewer than 12 points, mismatched lengths or a non-uniform grid.
    SingularSystemError
        Condition number of ``R_H`` above 1e12.
    """
    H = _hurst_key(H)
    x = np.asarray(window_values, dtype=float)
    if x.size < 12:
        raise ValueError("ml_estimate needs at least 12 points")
    t, _ = _check_uniform(window_times)
    if t.size != x.size:
        raise ValueError("values and times differ in length")
    span = t[-1] - t[0]
    scaled = _solver(x.size, H, int(degree)) @ x
    theta = np.empty(degree + 1)
    theta[0] = x[0]
    theta[1:] = scaled / span ** np.arange(1, degree + 1)
    return DriftEstimate(theta=theta, origin=float(t[0]), window=(float(t[0]), float(t[-1])))


# --------------------------------------------------------------------------- #
# sliding-window trend extraction


@dataclass
class TrendEstimate:
    """Window-averaged trend and per-window diagnostics.

    ``sigma_hat``, ``hurst_hat`` and ``window_starts`` are indexed by window;
    ``window_counts[k]`` is the number of windows covering sample ``k``.
    """

    fitted: np.ndarray
    sigma_hat: np.ndarray
    hurst_hat: np.ndarray
    window_counts: np.ndarray
    window_starts: np.ndarray
    window_width: int
    failed_windows: int = 0
    window_fits: list = field(default_factory=list, repr=False)

    def sigma_at(self) -> np.ndarray:
        """Per-sample noise scale from the window whose centre is nearest."""
        n = self.fitted.size
        centres = self.window_starts + (self.window_width - 1) / 2.0
        idx = np.abs(np.arange(n)[:, None] - centres[None, :]).argmin(axis=1)
        return self.sigma_hat[idx]


def _window_cubic(x: np.ndarray, H: float) -> np.ndarray:
    """Cubic trend coefficients of one window in sample units (origin at its first sample).

    The partial sums ``Y_m = sum_{j<m} X_j`` carry fBm noise with the
    same Hurst exponent as the fGn in ``X``, start at ``Y_0 = 0``, and
    have a quartic drift whenever the trend of ``X`` is cubic. The
    quartic ``P`` is fitted by ML and differenced back to
    ``f(m) = P(m + 1) - P(m)``.
    """
    n = x.size
    y = np.concatenate([[0.0], np.cumsum(x)])
    theta = _solver(n + 1, _hurst_key(H), 4) @ y  # P on normalized time m / n
    P = np.polynomial.Polynomial(np.concatenate([[0.0], theta / float(n) ** np.arange(1, 5)]))
    step = P(np.polynomial.Polynomial([1.0, 1.0])) - P
    coef = np.zeros(4)
    coef[: min(4, step.coef.size)] = step.coef[:4]
    return coef


def _fit_corrected(x: np.ndarray, H_init: float, correct: bool):
    """Steps a-e on one window: returns (cubic coefficients, sigma_hat, H_hat)."""
    grid = np.arange(x.size, dtype=float)
    coef = _window_cubic(x, H_init)
    resid = x - np.polynomial.polynomial.polyval(grid, coef)
    sigma = float(np.std(resid, ddof=1))
    H_hat = H_init
    if correct and sigma > 0 and x.size >= DFA_MIN_LENGTH:
        try:
            H_hat = estimate_hurst_dfa(resid / sigma)
        except ValueError:
            H_hat = H_init
        if H_hat != H_init:
            coef = _window_cubic(x, H_hat)
            resid = x - np.polynomial.polynomial.polyval(grid, coef)
            sigma = float(np.std(resid, ddof=1))
    return coef, sigma, H_hat


def _window_starts(n: int, width: int, stride: int) -> np.ndarray:
    starts = list(range(0, n - width + 1, stride))
    if starts[-1] != n - width:
        starts.append(n - width)
    return np.asarray(starts, dtype=int)


def _series_values(series) -> np.ndarray:
    values = getattr(series, "values", series)
    return np.asarray(values, dtype=float)


def extract_trend(
    series,
    window_width: int = DEFAULT_WINDOW,
    H_init: float = 0.5,
    stride: int | None = None,
    correct: bool = True,
) -> TrendEstimate:
    """Sliding-window ML trend with Hurst correction and window averaging.

    Each window ``[a, a + width)`` is fitted with ``H_init``; the residual
    standard deviation gives ``sigma_hat``; DFA on the standardized
    residuals gives ``H_hat`` (kept at ``H_init`` when the window is too
    short for DFA); the window is refitted with ``H_hat``. Overlapping
    window fits are averaged pointwise.

    Parameters
    ----------
    series : TimeSeries or array_like
        Uniformly sampled observations.
    window_width : int
        Window length in samples.
    H_init : float
        Hurst exponent of the first pass.
    stride : int, optional
        Window step, ``window_width // 4`` by default.
    correct : bool
        Run the Hurst-correction pass (steps d-e). ``False`` gives the
        uncorrected ``H_init`` fit.
    """
    x = _series_values(series)
    n = x.size
    width = int(window_width)
    if width < 12:
        raise ValueError("window_width must be at least 12 samples")
    if n < width:
        raise ValueError(f"series has {n} samples, fewer than the window width {width}")
    stride = max(1, width // 4) if stride is None else int(stride)
    starts = _window_starts(n, width, stride)
    times = np.asarray(getattr(series, "times", np.arange(n)), dtype=float)
    period = float(getattr(series, "sample_period", 1.0))
    total = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    sigmas, hursts, fits, used = [], [], [], []
    failed = 0
    grid = np.arange(width, dtype=float)
    for a in starts:
        seg = x[a : a + width]
        try:
            coef, sigma, H_hat = _fit_corrected(seg, H_init, correct)
        except (np.linalg.LinAlgError, ValueError, OverflowError) as exc:
            failed += 1
            logger.warning("window at %d failed: %s", a, exc)
            continue
        # fixed summation order: windows in increasing start
        total[a : a + width] += np.polynomial.polynomial.polyval(grid, coef)
        counts[a : a + width] += 1
        sigmas.append(sigma)
        hursts.append(H_hat)
        fits.append(
            DriftEstimate(
                theta=coef / period ** np.arange(4),
                origin=float(times[a]),
                window=(float(times[a]), float(times[a + width - 1])),
            )
        )
        used.append(a)
    if not used:
        raise RuntimeError("every window fit failed")
    fitted = np.full(n, np.nan)
    covered = counts > 0
    fitted[covered] = total[covered] / counts[covered]
    return TrendEstimate(
        fitted=fitted,
        sigma_hat=np.asarray(sigmas),
        hurst_hat=np.asarray(hursts),
        window_counts=counts,
        window_starts=np.asarray(used, dtype=int),
        window_width=width,
        failed_windows=failed,
        window_fits=fits,
    )


def forecast_one_ahead(
    series,
    window_width: int = DEFAULT_WINDOW,
    H_init: float = 0.5,
    correct: bool = True,
) -> np.ndarray:
    """Causal one-step forecasts.

    The forecast for sample ``k`` extrapolates the corrected cubic fitted
    on the window ``[k - width, k)`` one step ahead. The first ``width``
    entries are NaN.
    """
    x = _series_values(series)
    n = x.size
    width = int(window_width)
    if n < width:
        raise ValueError(f"series has {n} samples, fewer than the window width {width}")
    out = np.full(n, np.nan)
    for k in range(width, n):
        try:
            coef, _, _ = _fit_corrected(x[k - width : k], H_init, correct)
        except (np.linalg.LinAlgError, ValueError, OverflowError):
            continue
        out[k] = np.polynomial.polynomial.polyval(float(width), coef)
    return out
