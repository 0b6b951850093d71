"""Logistic aggregation of detector signals and its ARER training objective.

``a_t = sigmoid(sum_{j<=p} sum_k lambda[k, j] s^k_{t-j} - lambda_0)``

Alarm when ``a_t >= h_A``. Weights are learned by full-batch gradient
descent on the smoothed error rate

``F_D = mean_i [ c_inf / T_inf^i * sum_{normal t} sigmoid(a_t - h_A)
               + c_0 / T_0^i * sum_{abnormal t} sigmoid(h_A - a_t) ]``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .change_model import DataFormatError, read_keyvalue, write_keyvalue
from .detectors import DetectorBank

logger = logging.getLogger(__name__)

__all__ = [
    "EnsembleModel",
    "AggregatedTrajectory",
    "TrainOptions",
    "lagged_features",
    "aggregate",
    "detect",
    "arer_exact",
    "arer_surrogate",
    "surrogate_gradient",
    "train",
    "save_model",
    "load_model",
    "alarm_segments",
    "NonFiniteLossError",
    "MODEL_SCHEMA",
]

MODEL_SCHEMA = "lrdcpd-ensemble/1"
# keep a_t strictly inside (0, 1) after rounding
_A_MIN = np.nextafter(0.0, 1.0)
_A_MAX = np.nextafter(1.0, 0.0)


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class EnsembleModel:
    """Log-p ensemble: ``weights`` has shape ``(n_detectors, p + 1)``."""

    weights: np.ndarray
    bias: float = 0.0
    threshold: float = 0.5
    cost_false_alarm: float = 1.0
    cost_false_silence: float = 1.0
    signal_cap: float = 10.0
    bank: DetectorBank | None = None

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold h_A must lie in (0, 1)")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        if self.cost_false_alarm <= 0 or self.cost_false_silence <= 0:
            raise ValueError("costs must be positive")

    @classmethod
    def zeros(cls, n_detectors: int, lags: int, **kwargs) -> "EnsembleModel":
        return cls(weights=np.zeros((n_detectors, lags + 1)), **kwargs)

    @property
    def n_detectors(self) -> int:
        return self.weights.shape[0]

    @property
    def lags(self) -> int:
        return self.weights.shape[1] - 1


@dataclass
class AggregatedTrajectory:
    """Ensemble output ``a_t`` and its logit.

    ``a_t >= h`` exactly when ``logits >= log(h / (1 - h))``; the logit
    keeps the ordering where ``a_t`` rounds to 0 or 1 in floating point.
    """

    values: np.ndarray
    threshold: float
    stopping_time: int | None = None
    segments: list = field(default_factory=list)
    logits: np.ndarray | None = None


def _as_signal_matrix(signals) -> np.ndarray:
    if hasattr(signals, "__len__") and len(signals) and hasattr(signals[0], "normalized"):
        rows = [np.asarray(s.normalized, dtype=float) for s in signals]
        if len({r.size for r in rows}) != 1:
            raise ValueError("signals differ in length")
        return np.vstack(rows)
    arr = np.asarray(signals, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def lagged_features(signals, lags: int, cap: float | None = None) -> np.ndarray:
    """``X[t, k, j] = s^k_{t-j}`` with zeros before the start of the path."""
    s = _as_signal_matrix(signals)
    if cap is not None:
        s = np.minimum(s, cap)
    n_det, n = s.shape
    X = np.zeros((n, n_det, lags + 1))
    for j in range(lags + 1):
        X[j:, :, j] = s[:, : n - j].T
    return X


def _logits(model: EnsembleModel, X: np.ndarray) -> np.ndarray:
    return np.einsum("tkj,kj->t", X, model.weights) - model.bias


def aggregate(model: EnsembleModel, signals) -> AggregatedTrajectory:
    """Ensemble output ``a_t`` for one path of normalized signals."""
    s = _as_signal_matrix(signals)
    if s.shape[0] != model.n_detectors:
        raise ValueError(f"expected {model.n_detectors} signals, got {s.shape[0]}")
    X = lagged_features(s, model.lags, model.signal_cap)
    z = _logits(model, X)
    a = np.clip(expit(z), _A_MIN, _A_MAX)
    return AggregatedTrajectory(values=a, threshold=model.threshold, logits=z)


def alarm_segments(values, threshold: float) -> list:
    """Maximal runs ``(start, end)`` (inclusive indices) of ``values >= threshold``."""
    mask = np.asarray(values) >= threshold
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(s), int(e) - 1) for s, e in zip(edges[::2], edges[1::2])]


def detect(model: EnsembleModel, signals) -> AggregatedTrajectory:
    """Aggregate, then report the first alarm index and every alarm run."""
    traj = aggregate(model, signals)
    segs = alarm_segments(traj.values, model.threshold)
    traj.segments = segs
    traj.stopping_time = segs[0][0] if segs else None
    return traj


# --------------------------------------------------------------------------- #
# objective


def _usable(labels_list):
    keep = []
    for i, y in enumerate(labels_list):
        y = np.asarray(y)
        if y.sum() == 0 or y.sum() == y.size:
            warnings.warn(f"path {i} has no normal or no abnormal samples; excluded", RuntimeWarning)
            continue
        keep.append(i)
    if not keep:
        raise ValueError("no path has both normal and abnormal samples")
    return keep


def arer_exact(model: EnsembleModel, signals_list, labels_list, values_list=None) -> float:
    """Average relative error rate with indicator (non-smooth) rates.

    ``values_list`` may hold precomputed ``a_t`` trajectories in place of
    signals.
    """
    keep = _usable(labels_list)
    total = 0.0
    for i in keep:
        y = np.asarray(labels_list[i]) == 1
        a = values_list[i] if values_list is not None else aggregate(model, signals_list[i]).values
        alarm = np.asarray(a) >= model.threshold
        total += model.cost_false_alarm * np.mean(alarm[~y]) + model.cost_false_silence * np.mean(~alarm[y])
    return float(total / len(keep))


def _prepare(model: EnsembleModel, signals_list, labels_list):
    keep = _usable(labels_list)
    data = []
    for i in keep:
        X = lagged_features(signals_list[i], model.lags, model.signal_cap)
        y = np.asarray(labels_list[i]) == 1
        w = np.where(y, -model.cost_false_silence / y.sum(), model.cost_false_alarm / (~y).sum())
        data.append((X, y, w))
    return data


def _loss_grad(weights, bias, data, h_A, sharpness=1.0, want_grad=True):
    loss = 0.0
    g_w = np.zeros_like(weights)
    g_b = 0.0
    for X, y, w in data:
        a = expit(np.einsum("tkj,kj->t", X, weights) - bias)
        # normal: sigma(a - h); abnormal: sigma(h - a)
        z = sharpness * np.where(y, h_A - a, a - h_A)
        sz = expit(z)
        loss += np.sum(np.abs(w) * sz)
        if want_grad:
            # d/da of |w| sigma(+-(a - h)) = w * sharpness * sigma'(z), sign folded into w
            dl_da = w * sharpness * sz * (1.0 - sz)
            dl_dz = dl_da * a * (1.0 - a)
            g_w += np.einsum("t,tkj->kj", dl_dz, X)
            g_b -= dl_dz.sum()
    n = len(data)
    return loss / n, g_w / n, g_b / n


def arer_surrogate(model: EnsembleModel, signals_list, labels_list, sharpness: float = 1.0) -> float:
    """Smoothed ARER; ``sharpness`` scales the outer logistic (1 reproduces the plain form)."""
    data = _prepare(model, signals_list, labels_list)
    return float(_loss_grad(model.weights, model.bias, data, model.threshold, sharpness, want_grad=False)[0])


def surrogate_gradient(model: EnsembleModel, signals_list, labels_list):
    """Analytic gradient of :func:`arer_surrogate` w.r.t. ``(weights, bias)``."""
    data = _prepare(model, signals_list, labels_list)
    _, g_w, g_b = _loss_grad(model.weights, model.bias, data, model.threshold)
    return g_w, g_b


@dataclass
class TrainOptions:
    lags: int = 1
    epochs: int = 200
    step: float = 0.1
    threshold: float = 0.5
    cost_false_alarm: float = 1.0
    cost_false_silence: float = 1.0
    signal_cap: float = 10.0
    armijo: float = 1e-4
    max_halvings: int = 40
    growth: float = 2.0


def train(signals_list, labels_list, options: TrainOptions | None = None, bank: DetectorBank | None = None):
    """Fit ensemble weights by full-batch gradient descent with backtracking.

    Weights start at zero and ``h_A`` stays fixed. Every accepted step
    satisfies the Armijo condition, so the training loss never increases;
    after an accepted step the trial step grows by ``options.growth``.

    Returns
    -------
    model : EnsembleModel
    history : list of float
        Surrogate loss after each epoch (index 0 is the initial loss).
    """
    opt = options or TrainOptions()
    n_det = _as_signal_matrix(signals_list[0]).shape[0]
    model = EnsembleModel.zeros(
        n_det,
        opt.lags,
        threshold=opt.threshold,
        cost_false_alarm=opt.cost_false_alarm,
        cost_false_silence=opt.cost_false_silence,
        signal_cap=opt.signal_cap,
        bank=bank,
    )
    data = _prepare(model, signals_list, labels_list)
    w, b = model.weights.copy(), 0.0
    loss, g_w, g_b = _loss_grad(w, b, data, opt.threshold)
    history = [loss]
    step = opt.step
    for epoch in range(opt.epochs):
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"non-finite loss at epoch {epoch}: weights={w.tolist()}, bias={b}")
        gnorm2 = float(np.sum(g_w**2) + g_b**2)
        if gnorm2 == 0.0:
            history.append(loss)
            continue
        for _ in range(opt.max_halvings):
            w_new, b_new = w - step * g_w, b - step * g_b
            new_loss, ng_w, ng_b = _loss_grad(w_new, b_new, data, opt.threshold)
            if np.isfinite(new_loss) and new_loss <= loss - opt.armijo * step * gnorm2:
                w, b, loss, g_w, g_b = w_new, b_new, new_loss, ng_w, ng_b
                step *= opt.growth
                break
            step *= 0.5
        history.append(loss)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite final loss: weights={w.tolist()}, bias={b}")
    return replace(model, weights=w, bias=float(b)), history


# --------------------------------------------------------------------------- #
# persistence


def _f(x) -> str:
    return repr(float(x))


def save_model(model: EnsembleModel, path, extra=()) -> None:
    """Write a key=value model file; floats use ``repr`` so reading back is exact.

    ``extra`` appends further ``(key, value)`` pairs, which
    :func:`load_model` ignores.
    """
    items = [
        ("schema", MODEL_SCHEMA),
        ("n_detectors", model.n_detectors),
        ("lags", model.lags),
        ("threshold", _f(model.threshold)),
        ("cost_false_alarm", _f(model.cost_false_alarm)),
        ("cost_false_silence", _f(model.cost_false_silence)),
        ("signal_cap", _f(model.signal_cap)),
        ("bias", _f(model.bias)),
        ("weights", ",".join(_f(v) for v in model.weights.ravel(order="C"))),
    ]
    if model.bank is not None:
        bank = model.bank
        items += [
            ("bank.kinds", ",".join(bank.kinds)),
            ("bank.delta", _f(bank.delta)),
            ("bank.window", int(bank.window)),
            ("bank.prior", _f(bank.prior)),
            ("bank.quantile", _f(bank.quantile)),
        ]
        if bank.thresholds is not None:
            items.append(("bank.thresholds", ",".join(_f(v) for v in bank.thresholds)))
    items += list(extra)
    write_keyvalue(path, items)


def load_model(path) -> EnsembleModel:
    path = Path(path)
    kv = read_keyvalue(path)
    if kv.get("schema") != MODEL_SCHEMA:
        raise DataFormatError(f"{path}: unsupported schema {kv.get('schema')!r}")
    try:
        n, lags = int(kv["n_detectors"]), int(kv["lags"])
        weights = np.array([float(v) for v in kv["weights"].split(",")]).reshape(n, lags + 1)
        bank = None
        if "bank.kinds" in kv:
            bank = DetectorBank(
                kinds=tuple(kv["bank.kinds"].split(",")),
                delta=float(kv["bank.delta"]),
                window=int(kv["bank.window"]),
                prior=float(kv["bank.prior"]),
                quantile=float(kv["bank.quantile"]),
            )
            if "bank.thresholds" in kv:
                bank.thresholds = np.array([float(v) for v in kv["bank.thresholds"].split(",")])
        return EnsembleModel(
            weights=weights,
            bias=float(kv["bias"]),
            threshold=float(kv["threshold"]),
            cost_false_alarm=float(kv["cost_false_alarm"]),
            cost_false_silence=float(kv["cost_false_silence"]),
            signal_cap=float(kv["signal_cap"]),
            bank=bank,
        )
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing key {exc.args[0]!r}") from None
