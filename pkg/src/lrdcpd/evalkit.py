"""Evaluation metrics: RRMSE, detection segments, PR and ARER curves.

A procedure's statistic trajectory ``S_t`` and a threshold ``h`` define
detection segments, the maximal runs of ``S_t >= h``. A segment is a true
positive when it intersects the labeled change interval and a false
positive otherwise. Over a test set:

* recall is the fraction of changed paths with at least one true positive;
* precision is pooled ``TP / (TP + FP)``, taken as 1 when nothing fires.

The ARER curve plots the average false-alarm rate on normal time against
the average false-silence rate on abnormal time.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .change_model import atomic_write_text, write_keyvalue

__all__ = [
    "DetectionSegment",
    "CurvePoint",
    "rrmse",
    "rrmse_details",
    "segments_from_statistic",
    "match_detections",
    "segment_counts",
    "pr_curve",
    "arer_curve",
    "pr_auc",
    "arer_auc",
    "threshold_grid",
    "peak_grid",
    "probability_grid",
    "write_curve_csv",
    "write_summary",
    "RRMSE_GUARD",
    "GRID_SIZE",
]

RRMSE_GUARD = 1e-12
GRID_SIZE = 101


@dataclass(frozen=True)
class DetectionSegment:
    start: int
    end: int
    peak: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("segment start must not exceed its end")


@dataclass(frozen=True)
class CurvePoint:
    """One threshold of a PR curve (``x = precision``, ``y = recall``) or ARER curve (``afpr``, ``afnr``)."""

    threshold: float
    x: float
    y: float


# --------------------------------------------------------------------------- #
# RRMSE


def rrmse_details(actual, predicted, guard: float = RRMSE_GUARD) -> tuple[float, int]:
    """RRMSE and the number of samples excluded.

    Samples with ``|actual| < guard`` or a non-finite prediction are
    dropped from the mean.
    """
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise ValueError("actual and predicted must have equal lengths")
    keep = (np.abs(a) >= guard) & np.isfinite(p) & np.isfinite(a)
    excluded = int(a.size - keep.sum())
    if not keep.any():
        raise ValueError("no samples left after excluding near-zero actual values")
    rel = (a[keep] - p[keep]) / a[keep]
    return float(np.sqrt(np.mean(rel**2))), excluded


def rrmse(actual, predicted, guard: float = RRMSE_GUARD) -> float:
    """``sqrt(mean(((actual - predicted) / actual)^2))`` as a fraction (not percent)."""
    value, excluded = rrmse_details(actual, predicted, guard)
    if excluded:
        warnings.warn(f"rrmse: {excluded} samples excluded", RuntimeWarning, stacklevel=2)
    return value


# --------------------------------------------------------------------------- #
# segments


def segments_from_statistic(trajectory, threshold: float) -> list[DetectionSegment]:
    """Maximal runs of ``trajectory >= threshold``; NaN counts as below."""
    s = np.asarray(trajectory, dtype=float)
    with np.errstate(invalid="ignore"):
        mask = s >= threshold
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [
        DetectionSegment(int(a), int(b) - 1, float(np.max(s[a:b])))
        for a, b in zip(edges[::2], edges[1::2])
    ]


def match_detections(segments, true_segment) -> tuple[int, int, bool]:
    """``(tp, fp, detected)`` for one path; ``true_segment`` is ``(first, last)`` or None."""
    tp = fp = 0
    for seg in segments:
        start, end = (seg.start, seg.end) if isinstance(seg, DetectionSegment) else seg
        if true_segment is not None and start <= true_segment[1] and end >= true_segment[0]:
            tp += 1
        else:
            fp += 1
    return tp, fp, tp > 0


def segment_counts(trajectory, true_segment, thresholds) -> tuple[np.ndarray, np.ndarray]:
    """TP and FP segment counts for every threshold at once.

    Equivalent to :func:`match_detections` on :func:`segments_from_statistic`
    per threshold.
    """
    s = np.asarray(trajectory, dtype=float)
    h = np.asarray(thresholds, dtype=float)
    with np.errstate(invalid="ignore"):
        mask = s[None, :] >= h[:, None]
    starts = mask.copy()
    starts[:, 1:] &= ~mask[:, :-1]
    total = starts.sum(axis=1)
    if true_segment is None:
        return np.zeros_like(total), total
    a, b = true_segment
    # runs meeting [a, b]: those already on at a, plus those starting inside (a, b]
    tp = mask[:, a].astype(int) + starts[:, a + 1 : b + 1].sum(axis=1)
    return tp, total - tp


def _path_inputs(statistics, true_segments):
    stats = [np.asarray(s, dtype=float) for s in statistics]
    if len(stats) != len(true_segments):
        raise ValueError("one true segment (or None) is needed per path")
    if not stats:
        raise ValueError("no paths")
    return stats


def pr_curve(statistics, true_segments, thresholds) -> list[CurvePoint]:
    """Precision-recall points, one per threshold.

    Parameters
    ----------
    statistics : sequence of arrays
        Per-path statistic trajectories.
    true_segments : sequence
        ``(first, last)`` labeled index range per path, or None for a
        path without a change.
    thresholds : array
        Threshold grid.
    """
    stats = _path_inputs(statistics, true_segments)
    h = np.asarray(thresholds, dtype=float)
    tp = np.zeros(h.size, dtype=np.int64)
    fp = np.zeros(h.size, dtype=np.int64)
    hit = np.zeros(h.size, dtype=np.int64)
    changed = 0
    for s, seg in zip(stats, true_segments):
        t, f = segment_counts(s, seg, h)
        tp += t
        fp += f
        if seg is not None:
            changed += 1
            hit += t > 0
    fired = tp + fp
    precision = np.where(fired > 0, tp / np.maximum(fired, 1), 1.0)
    recall = hit / changed if changed else np.zeros(h.size)
    return [CurvePoint(float(a), float(p), float(r)) for a, p, r in zip(h, precision, recall)]


def arer_curve(statistics, labels, thresholds, c_inf: float = 1.0, c_0: float = 1.0) -> list[CurvePoint]:
    """Average false-positive and false-negative rates per threshold.

    Paths with no normal or no abnormal samples are excluded with a warning.
    """
    h = np.asarray(thresholds, dtype=float)
    afpr = np.zeros(h.size)
    afnr = np.zeros(h.size)
    used = 0
    for i, (s, y) in enumerate(zip(statistics, labels)):
        s = np.asarray(s, dtype=float)
        y = np.asarray(y) == 1
        if y.all() or not y.any():
            warnings.warn(f"path {i} has no normal or no abnormal samples; excluded", RuntimeWarning)
            continue
        with np.errstate(invalid="ignore"):
            alarm = s[None, :] >= h[:, None]
        afpr += c_inf * alarm[:, ~y].mean(axis=1)
        afnr += c_0 * (~alarm[:, y]).mean(axis=1)
        used += 1
    if not used:
        raise ValueError("no path has both normal and abnormal samples")
    return [CurvePoint(float(a), float(p), float(n)) for a, p, n in zip(h, afpr / used, afnr / used)]


def _trapezoid(x, y) -> float:
    order = np.lexsort((y, x))
    return float(trapezoid(np.asarray(y)[order], np.asarray(x)[order]))


def pr_auc(points) -> float:
    """Step-wise area under the PR curve (average precision).

    Points are ordered by recall; each recall increment is weighted by the
    best precision reached at the new recall level. The "nothing fires"
    point (recall 0, precision 1) therefore adds no area.
    """
    r = np.array([p.y for p in points], dtype=float)
    prec = np.array([p.x for p in points], dtype=float)
    order = np.lexsort((-prec, r))
    r, prec = r[order], prec[order]
    return float(np.sum(np.diff(np.concatenate([[0.0], r])) * prec))


def arer_auc(points) -> float:
    """Area under the afnr-vs-afpr curve (trapezoid rule); smaller is better."""
    return _trapezoid([p.x for p in points], [p.y for p in points])


def threshold_grid(statistics, size: int = GRID_SIZE) -> np.ndarray:
    """Quantile-spaced grid over the pooled finite statistic values.

    The end points are the observed minimum and maximum.
    """
    pooled = np.concatenate([np.ravel(np.asarray(s, dtype=float)) for s in statistics])
    pooled = pooled[np.isfinite(pooled)]
    if pooled.size == 0:
        raise ValueError("no finite statistic values")
    return np.quantile(pooled, np.linspace(0.0, 1.0, size))


def peak_grid(statistics, size: int = GRID_SIZE) -> np.ndarray:
    """Quantile-spaced grid over per-path peak values, for PR curves.

    A path's segments only change as the threshold passes values up to its
    peak, so the precision-recall trade-off lives between the smallest and
    largest peak. Peaks at the pooled minimum are dropped: a threshold there
    alarms on every sample and turns each path into one segment.
    """
    stats = [np.asarray(s, dtype=float) for s in statistics]
    pooled = np.concatenate([s[np.isfinite(s)] for s in stats])
    if pooled.size == 0:
        raise ValueError("no finite statistic values")
    peaks = np.array([np.nanmax(s) for s in stats if np.isfinite(s).any()])
    peaks = peaks[peaks > pooled.min()]
    if peaks.size == 0:
        # constant statistic: a single threshold just above it
        return np.full(size, np.nextafter(pooled.min(), np.inf))
    return np.quantile(peaks, np.linspace(0.0, 1.0, size))


def probability_grid(size: int = GRID_SIZE) -> np.ndarray:
    """``size`` equally spaced thresholds strictly inside (0, 1)."""
    return np.linspace(0.0, 1.0, size + 2)[1:-1]


# --------------------------------------------------------------------------- #
# export


def write_curve_csv(path, points, kind: str) -> None:
    """``threshold,precision,recall`` (kind ``"pr"``) or ``threshold,afpr,afnr`` (``"arer"``)."""
    headers = {"pr": "threshold,precision,recall", "arer": "threshold,afpr,afnr"}
    if kind not in headers:
        raise ValueError(f"unknown curve kind {kind!r}")
    buf = io.StringIO()
    buf.write(headers[kind] + "\n")
    for p in points:
        buf.write(f"{p.threshold!r},{p.x!r},{p.y!r}\n")
    atomic_write_text(path, buf.getvalue())


def write_summary(path, metrics: dict) -> None:
    """Flat ``key=value`` file in insertion order."""
    items = []
    for key, value in metrics.items():
        if isinstance(value, (float, np.floating)):
            value = repr(float(value))
        items.append((key, value))
    write_keyvalue(path, items)
