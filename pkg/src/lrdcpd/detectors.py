"""Weak sequential detectors on the residual process.

Five statistics, each fed one residual at a time:

* CUSUM            ``T_t = max(0, T_{t-1} + zeta_t)``
* Shiryaev-Roberts ``R_t = (1 + R_{t-1}) exp(zeta_t)``
* Shewhart         ``|r_t|``
* window           ``|mean(last w) - mean(previous w)| * sqrt(w / 2)``
* posterior        Shiryaev posterior probability of a past change

``zeta_t = delta * (r_t - delta / 2)`` is the log-likelihood ratio of
N(delta, 1) against N(0, 1). Single-step ``*_update`` functions mirror the
vectorised :func:`statistic_trajectory`, which runs many paths at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

__all__ = [
    "KINDS",
    "DetectorState",
    "SignalTrajectory",
    "DetectorBank",
    "log_likelihood_ratio",
    "initial_state",
    "cusum_update",
    "shiryaev_roberts_update",
    "shewhart_update",
    "window_changepoint_update",
    "posterior_probability_update",
    "update",
    "statistic_trajectory",
    "calibrate_reference_threshold",
    "DEFAULT_PARAMS",
    "SR_CAP",
]

KINDS = ("cusum", "shiryaev_roberts", "shewhart", "window", "posterior")
DEFAULT_PARAMS = {"delta": 3.0, "window": 20, "prior": 1.0 / 2016}
SR_CAP = 1e300


def log_likelihood_ratio(r, delta: float):
    return delta * (np.asarray(r, dtype=float) - 0.5 * delta)


@dataclass(frozen=True)
class DetectorState:
    """Recursion state of one detector.

    ``aux`` holds what the statistic alone cannot: ``log R`` for
    Shiryaev-Roberts, the posterior log-odds, or the residual buffer of
    the window detector.
    """

    kind: str
    statistic: float = 0.0
    params: dict = field(default_factory=dict)
    aux: object = None

    def param(self, name):
        return self.params.get(name, DEFAULT_PARAMS[name])


def initial_state(kind: str, **params) -> DetectorState:
    if kind not in KINDS:
        raise ValueError(f"unknown detector kind {kind!r}")
    aux = None
    if kind == "shiryaev_roberts":
        aux = -np.inf
    elif kind == "posterior":
        aux = -np.inf
    elif kind == "window":
        aux = ()
    return DetectorState(kind=kind, statistic=0.0, params=dict(params), aux=aux)


def _zeta(state: DetectorState, r: float) -> float:
    return float(log_likelihood_ratio(r, state.param("delta")))


def cusum_update(state: DetectorState, r: float) -> DetectorState:
    return replace(state, statistic=max(0.0, state.statistic + _zeta(state, r)))


def shiryaev_roberts_update(state: DetectorState, r: float) -> DetectorState:
    # log-domain: log R_t = zeta_t + log(1 + R_{t-1})
    log_r = _zeta(state, r) + np.logaddexp(0.0, state.aux)
    stat = float(min(np.exp(min(log_r, 700.0)), SR_CAP))
    return replace(state, statistic=stat, aux=float(log_r))


def shewhart_update(state: DetectorState, r: float) -> DetectorState:
    return replace(state, statistic=abs(float(r)))


def window_changepoint_update(state: DetectorState, r: float) -> DetectorState:
    w = int(state.param("window"))
    buf = (tuple(state.aux) + (float(r),))[-2 * w :]
    if len(buf) < 2 * w:
        return replace(state, statistic=0.0, aux=buf)
    prev, recent = np.mean(buf[:w]), np.mean(buf[w:])
    return replace(state, statistic=float(abs(recent - prev) * np.sqrt(w / 2.0)), aux=buf)


def posterior_probability_update(state: DetectorState, r: float) -> DetectorState:
    p = state.param("prior")
    # log-odds of pi_{t-1} + p (1 - pi_{t-1}), then Bayes with L_t = exp(zeta)
    odds = np.logaddexp(state.aux, np.log(p)) - np.log1p(-p) + _zeta(state, r)
    return replace(state, statistic=float(expit(odds)), aux=float(odds))


_UPDATES = {
    "cusum": cusum_update,
    "shiryaev_roberts": shiryaev_roberts_update,
    "shewhart": shewhart_update,
    "window": window_changepoint_update,
    "posterior": posterior_probability_update,
}


def update(state: DetectorState, r: float) -> DetectorState:
    return _UPDATES[state.kind](state, r)


def statistic_trajectory(kind: str, residuals, **params) -> np.ndarray:
    """Detector statistic for every time step.

    ``residuals`` is 1-D (one path) or 2-D ``(paths, time)``; the output
    has the same shape. Equivalent to folding the matching ``*_update``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown detector kind {kind!r}")
    opts = {**DEFAULT_PARAMS, **params}
    r = np.asarray(residuals, dtype=float)
    one = r.ndim == 1
    r = np.atleast_2d(r)
    n_paths, n = r.shape
    out = np.empty_like(r)
    delta = opts["delta"]
    if kind == "shewhart":
        out = np.abs(r)
    elif kind == "window":
        w = int(opts["window"])
        out[:] = 0.0
        if n >= 2 * w:
            c = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(r, axis=1)], axis=1)
            end = np.arange(2 * w, n + 1)
            recent = (c[:, end] - c[:, end - w]) / w
            prev = (c[:, end - w] - c[:, end - 2 * w]) / w
            out[:, 2 * w - 1 :] = np.abs(recent - prev) * np.sqrt(w / 2.0)
    else:
        zeta = log_likelihood_ratio(r, delta)
        if kind == "cusum":
            stat = np.zeros(n_paths)
            for t in range(n):
                stat = np.maximum(0.0, stat + zeta[:, t])
                out[:, t] = stat
        elif kind == "shiryaev_roberts":
            log_r = np.full(n_paths, -np.inf)
            for t in range(n):
                log_r = zeta[:, t] + np.logaddexp(0.0, log_r)
                out[:, t] = np.minimum(np.exp(np.minimum(log_r, 700.0)), SR_CAP)
        else:  # posterior
            p = opts["prior"]
            odds = np.full(n_paths, -np.inf)
            lp, l1p = np.log(p), np.log1p(-p)
            for t in range(n):
                odds = np.logaddexp(odds, lp) - l1p + zeta[:, t]
                out[:, t] = expit(odds)
    return out[0] if one else out


@dataclass(frozen=True)
class SignalTrajectory:
    """Raw statistic and its normalisation ``s = S / h`` by a reference threshold."""

    raw: np.ndarray
    reference_threshold: float

    def __post_init__(self):
        if not self.reference_threshold > 0:
            raise ValueError("reference threshold must be positive")

    @property
    def normalized(self) -> np.ndarray:
        return np.asarray(self.raw, dtype=float) / self.reference_threshold


def calibrate_reference_threshold(statistics, labels, q: float = 0.99) -> float:
    """Empirical ``q``-quantile of a detector statistic over normal-labelled samples.

    Parameters
    ----------
    statistics, labels : sequence of arrays
        Per-path statistic trajectories and 0/1 labels.
    q : float
        Quantile level in (0, 1]; ``q = 1`` gives the maximum.

    Raises
    ------
    ValueError
        No normal samples, or the quantile is not positive.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    pooled = [np.asarray(s, dtype=float)[np.asarray(y) == 0] for s, y in zip(statistics, labels)]
    pooled = np.concatenate(pooled) if pooled else np.empty(0)
    if pooled.size == 0:
        raise ValueError("no normal-labelled samples to calibrate on")
    h = float(np.quantile(pooled, q))
    if not h > 0 or not np.isfinite(h):
        raise ValueError(f"degenerate reference threshold h={h}; statistic is zero on normal data")
    return h


@dataclass
class DetectorBank:
    """The five detectors with shared parameters and calibrated thresholds."""

    kinds: tuple = KINDS
    delta: float = DEFAULT_PARAMS["delta"]
    window: int = DEFAULT_PARAMS["window"]
    prior: float = DEFAULT_PARAMS["prior"]
    quantile: float = 0.99
    thresholds: np.ndarray | None = None

    @property
    def params(self) -> dict:
        return {"delta": self.delta, "window": self.window, "prior": self.prior}

    def statistics(self, residuals) -> np.ndarray:
        """``(n_detectors, time)`` for one path or ``(n_detectors, paths, time)``."""
        return np.stack([statistic_trajectory(k, residuals, **self.params) for k in self.kinds])

    def calibrate(self, residual_paths, labels) -> "DetectorBank":
        hs = []
        for k in self.kinds:
            stats = [statistic_trajectory(k, r, **self.params) for r in residual_paths]
            hs.append(calibrate_reference_threshold(stats, labels, self.quantile))
        self.thresholds = np.asarray(hs)
        return self

    def signals(self, residuals) -> np.ndarray:
        if self.thresholds is None:
            raise RuntimeError("detector bank is not calibrated")
        stats = self.statistics(residuals)
        shape = (-1,) + (1,) * (stats.ndim - 1)
        return stats / self.thresholds.reshape(shape)
