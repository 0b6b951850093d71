"""Change-point detection in seasonal time series with long-range dependent noise.

Modules
-------
lrd_core
    Fractional Gaussian noise simulation and DFA Hurst estimation.
trend_filter
    Maximum-likelihood polynomial trend filter for fBm-driven data.
change_model
    Series containers, the artificial change model and file I/O.
detectors
    CUSUM, Shiryaev-Roberts, Shewhart, window and posterior detectors.
ensemble
    Logistic aggregation of detector signals and its training.
baselines
    EWMA-Threshold, EWMA-CUSUM and SSA/PCA subspace procedures.
evalkit
    RRMSE, detection segments, PR and ARER curves.
experiments
    Train/score/evaluate pipelines used by the command line.
"""

__version__ = "0.1.0"

from .change_model import (  # noqa: E402
    ChangeSpec,
    LabeledDataset,
    LabeledPath,
    TimeSeries,
    compute_residuals,
    generate_artificial,
)
from .detectors import DetectorBank  # noqa: E402
from .ensemble import EnsembleModel, aggregate, detect, train  # noqa: E402
from .lrd_core import estimate_hurst_dfa, simulate_fgn  # noqa: E402
from .trend_filter import extract_trend, ml_estimate  # noqa: E402

__all__ = [
    "ChangeSpec",
    "DetectorBank",
    "EnsembleModel",
    "LabeledDataset",
    "LabeledPath",
    "TimeSeries",
    "aggregate",
    "compute_residuals",
    "detect",
    "estimate_hurst_dfa",
    "extract_trend",
    "generate_artificial",
    "ml_estimate",
    "simulate_fgn",
    "train",
    "__version__",
]
