"""End-to-end pipelines shared by the command line and the acceptance suite.

Training fits, on one labeled dataset:

* the detector bank's reference thresholds on the ML-filter residuals;
* the ensemble weights;
* the EWMA-Threshold and EWMA-CUSUM parameters, by training PR-AUC.

Scoring applies every procedure to another dataset and returns per-path
statistic trajectories that the curve functions of :mod:`evalkit` consume.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import baselines, evalkit
from .change_model import LabeledDataset, compute_residuals
from .detectors import DetectorBank, statistic_trajectory
from .ensemble import EnsembleModel, TrainOptions, aggregate, train
from .trend_filter import DEFAULT_WINDOW, extract_trend, forecast_one_ahead

logger = logging.getLogger(__name__)

__all__ = [
    "PipelineOptions",
    "FittedPipeline",
    "residualize",
    "fit_pipeline",
    "score_procedures",
    "evaluate_scores",
    "trend_accuracy",
    "PROCEDURES",
]

PROCEDURES = ("ours", "cusum", "ewma_threshold", "ewma_cusum", "pca", "pca_pretraining")


@dataclass
class PipelineOptions:
    window_width: int = DEFAULT_WINDOW
    hurst_init: float = 0.5
    correct: bool = True
    lags: int = 1
    epochs: int = 200
    step: float = 0.1
    cost_false_alarm: float = 1.0
    cost_false_silence: float = 1.0
    quantile: float = 0.99
    ssa_window: int = baselines.SSA_WINDOW


@dataclass
class FittedPipeline:
    options: PipelineOptions
    bank: DetectorBank
    model: EnsembleModel
    ewma_threshold: dict
    ewma_cusum: dict
    history: list = field(default_factory=list)


def residualize(dataset: LabeledDataset, options: PipelineOptions | None = None) -> list:
    """Standardized ML-filter residuals of every path."""
    opt = options or PipelineOptions()
    out = []
    for path in dataset:
        est = extract_trend(path.series, opt.window_width, opt.hurst_init, correct=opt.correct)
        out.append(compute_residuals(path.series, est).values)
    return out


def _segments(dataset):
    return [p.true_segment() for p in dataset]


def _training_auc(stats, segments) -> float:
    grid = evalkit.peak_grid(stats)
    return evalkit.pr_auc(evalkit.pr_curve(stats, segments, grid))


def _calibrate_ewma(dataset: LabeledDataset):
    segs = _segments(dataset)
    values = [p.series.values for p in dataset]

    def thr_score(smoothing, h, window):
        stats = [baselines.ewma_threshold_statistic(v, h, window, smoothing) for v in values]
        return _training_auc(stats, segs)

    def cusum_score(smoothing, delta):
        stats = [baselines.ewma_cusum_statistic(v, delta, smoothing) for v in values]
        return _training_auc(stats, segs)

    thr, thr_auc = baselines.grid_search(
        thr_score,
        {
            "smoothing": baselines.SMOOTHING_GRID,
            "h": baselines.THRESHOLD_H_GRID,
            "window": baselines.THRESHOLD_WINDOW_GRID,
        },
    )
    cus, cus_auc = baselines.grid_search(
        cusum_score, {"smoothing": baselines.SMOOTHING_GRID, "delta": baselines.CUSUM_DELTA_GRID}
    )
    logger.info("EWMA-Threshold %s (train PR-AUC %.4f)", thr, thr_auc)
    logger.info("EWMA-CUSUM %s (train PR-AUC %.4f)", cus, cus_auc)
    return {k: float(v) for k, v in thr.items()}, {k: float(v) for k, v in cus.items()}


def fit_pipeline(dataset: LabeledDataset, options: PipelineOptions | None = None, residuals=None) -> FittedPipeline:
    """Calibrate detectors, train the ensemble and tune the EWMA baselines."""
    opt = options or PipelineOptions()
    resid = residualize(dataset, opt) if residuals is None else residuals
    labels = [p.labels for p in dataset]
    bank = DetectorBank(quantile=opt.quantile).calibrate(resid, labels)
    signals = [bank.signals(r) for r in resid]
    model, history = train(
        signals,
        labels,
        TrainOptions(
            lags=opt.lags,
            epochs=opt.epochs,
            step=opt.step,
            cost_false_alarm=opt.cost_false_alarm,
            cost_false_silence=opt.cost_false_silence,
        ),
        bank=bank,
    )
    thr, cus = _calibrate_ewma(dataset)
    return FittedPipeline(opt, bank, model, thr, cus, history)


def _ssa_stat(values, history, window, pretrain):
    fit_on = np.concatenate([history, values]) if pretrain else values
    return baselines.pca_residual_statistic(baselines.ssa_fit(fit_on, window), values)


def score_procedures(fitted: FittedPipeline, dataset: LabeledDataset, residuals=None) -> dict:
    """Per-path statistic trajectories for every procedure in :data:`PROCEDURES`.

    The ensemble is represented by the logit of ``a_t``, which orders time
    points identically but does not round to 0 or 1.

    PCA-Pretraining needs each path's history; it is skipped when any path
    lacks one.
    """
    opt = fitted.options
    resid = residualize(dataset, opt) if residuals is None else residuals
    bank = fitted.bank
    out = {name: [] for name in PROCEDURES}
    has_history = all(p.history is not None for p in dataset)
    for path, r in zip(dataset, resid):
        x = path.series.values
        out["ours"].append(aggregate(fitted.model, bank.signals(r)).logits)
        out["cusum"].append(statistic_trajectory("cusum", r, **bank.params))
        t = fitted.ewma_threshold
        out["ewma_threshold"].append(
            baselines.ewma_threshold_statistic(x, t["h"], int(t["window"]), t["smoothing"])
        )
        c = fitted.ewma_cusum
        out["ewma_cusum"].append(baselines.ewma_cusum_statistic(x, c["delta"], c["smoothing"]))
        out["pca"].append(_ssa_stat(x, None, opt.ssa_window, False))
        if has_history:
            out["pca_pretraining"].append(_ssa_stat(x, path.history.values, opt.ssa_window, True))
    if not has_history:
        del out["pca_pretraining"]
    return out


def _relabel(points, transform):
    return [evalkit.CurvePoint(float(transform(p.threshold)), p.x, p.y) for p in points]


def evaluate_scores(scores: dict, dataset: LabeledDataset, c_inf: float = 1.0, c_0: float = 1.0) -> dict:
    """PR and ARER curves plus their areas for every procedure.

    PR curves sweep :func:`evalkit.peak_grid`. ARER curves sweep
    :func:`evalkit.threshold_grid`, except the ensemble, whose ``a_t`` is
    swept over :func:`evalkit.probability_grid`. Ensemble thresholds are
    reported on the ``a_t`` scale.
    """
    segs = _segments(dataset)
    labels = [p.labels for p in dataset]
    result = {}
    for name, stats in scores.items():
        if name == "ours":
            pr = _relabel(evalkit.pr_curve(stats, segs, evalkit.peak_grid(stats)), expit)
            ar = _relabel(evalkit.arer_curve(stats, labels, logit(evalkit.probability_grid()), c_inf, c_0), expit)
        else:
            pr = evalkit.pr_curve(stats, segs, evalkit.peak_grid(stats))
            ar = evalkit.arer_curve(stats, labels, evalkit.threshold_grid(stats), c_inf, c_0)
        result[name] = {
            "pr": pr,
            "arer": ar,
            "pr_auc": evalkit.pr_auc(pr),
            "arer_auc": evalkit.arer_auc(ar),
        }
    return result


def trend_accuracy(dataset: LabeledDataset, options: PipelineOptions | None = None, smoothing: float = 0.05) -> dict:
    """Mean RRMSE (percent) of trend approximation and one-step forecasts.

    Returns ``{method: (trend_rrmse, forecast_rrmse)}`` for EWMA, PCA,
    PCA-Pretraining and the ML filter. Trend accuracy is measured against
    the true seasonal trend, forecasts against the observations. Forecast
    errors are compared on the samples where every method has a forecast.
    """
    opt = options or PipelineOptions()
    rows = {m: ([], []) for m in ("ewma", "pca", "pca_pretraining", "ours")}
    for path in dataset:
        if path.trend is None:
            raise ValueError("trend accuracy needs the true trend of every path")
        x = path.series.values
        f = path.trend
        ew = baselines.ewma_filter(x, smoothing).mean
        ew_fc = np.concatenate([[np.nan], ew[:-1]])
        ours = extract_trend(path.series, opt.window_width, opt.hurst_init, correct=opt.correct).fitted
        ours_fc = forecast_one_ahead(path.series, opt.window_width, opt.hurst_init, correct=opt.correct)
        pca = baselines.ssa_fit(x, opt.ssa_window)
        fits = {"ewma": (ew, ew_fc), "ours": (ours, ours_fc), "pca": (baselines.ssa_trend(pca, x), baselines.ssa_forecast_one_ahead(pca, x))}
        if path.history is not None:
            pre = baselines.ssa_fit(np.concatenate([path.history.values, x]), opt.ssa_window)
            fits["pca_pretraining"] = (baselines.ssa_trend(pre, x), baselines.ssa_forecast_one_ahead(pre, x))
        common = np.ones(x.size, dtype=bool)
        for _, fc in fits.values():
            common &= np.isfinite(fc)
        for name, (trend, fc) in fits.items():
            rows[name][0].append(evalkit.rrmse_details(f, trend)[0])
            rows[name][1].append(evalkit.rrmse_details(x[common], fc[common])[0])
    return {m: (100 * float(np.mean(a)), 100 * float(np.mean(b))) for m, (a, b) in rows.items() if a}
