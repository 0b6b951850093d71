"""Level-shift change model, residuals and the synthetic benchmark datasets.

Observations follow ``X_t = f(t) + mu * 1[theta, theta + dt](t) + sigma * Z^H_t``
with a daily sine trend and unit-spacing fGn noise.

Seed derivation
---------------
Path ``i`` of a dataset built from ``(profile, seed)`` uses
``numpy.random.SeedSequence([seed, PROFILE_CODE[profile], i])``.
Its first generated 64-bit word seeds the fGn draw; a PCG64 generator
spawned from the same sequence draws the change time and duration.
Paths are independent of ``count``: path ``i`` is the same in a dataset
of 10 paths and in one of 1000.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lrd_core import check_hurst, simulate_fgn

__all__ = [
    "TimeSeries",
    "ChangeSpec",
    "LabeledPath",
    "LabeledDataset",
    "PROFILES",
    "PROFILE_CODE",
    "seasonal_trend",
    "path_seeds",
    "generate_artificial",
    "generate_path",
    "inject_change",
    "change_labels",
    "compute_residuals",
    "read_series_csv",
    "write_series_csv",
    "write_dataset",
    "read_dataset",
    "write_keyvalue",
    "read_keyvalue",
    "atomic_write_text",
    "DataFormatError",
]

PATH_LENGTH = 2016
AMPLITUDE = 1.5
PERIOD = 288
PROFILES = {
    "easy": {"mu": 5.0},
    "hard": {"mu": 3.0},
}
PROFILE_CODE = {"easy": 1, "hard": 2}
NOISE_SIGMA = 1.0
NOISE_HURST = 0.95
DURATION_RANGE = (5.0, 100.0)
DATASET_SCHEMA = "lrdcpd-dataset/1"


class DataFormatError(ValueError):
    """Malformed or inconsistent input file."""


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    sample_period: float = 1.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        if times.size > 1:
            d = np.diff(times)
            if np.any(d <= 0) or not np.allclose(d, self.sample_period, rtol=1e-9, atol=1e-12):
                raise ValueError("times must be strictly increasing with constant step sample_period")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values, start: float = 0.0, sample_period: float = 1.0) -> "TimeSeries":
        values = np.asarray(values, dtype=float)
        return cls(start + sample_period * np.arange(values.size), values, sample_period)

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values) -> "TimeSeries":
        return replace(self, values=np.asarray(values, dtype=float))


@dataclass(frozen=True)
class ChangeSpec:
    """Level shift of size ``magnitude`` on the closed interval ``[change_time, change_time + duration]``."""

    change_time: float
    duration: float
    magnitude: float
    sigma: float = NOISE_SIGMA
    hurst: float = NOISE_HURST

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        check_hurst(self.hurst)

    @property
    def end_time(self) -> float:
        return self.change_time + self.duration


@dataclass
class LabeledPath:
    series: TimeSeries
    labels: np.ndarray
    change: ChangeSpec | None = None
    trend: np.ndarray | None = None
    history: TimeSeries | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.shape != self.series.values.shape:
            raise ValueError("labels must have the same length as the series")
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise ValueError("labels must be binary")

    @property
    def abnormal_duration(self) -> int:
        return int(self.labels.sum())

    @property
    def normal_duration(self) -> int:
        return int(self.labels.size - self.labels.sum())

    def true_segment(self) -> tuple[int, int] | None:
        """First and last labeled sample index, or None for an unlabeled path."""
        idx = np.flatnonzero(self.labels)
        if idx.size == 0:
            return None
        return int(idx[0]), int(idx[-1])


@dataclass
class LabeledDataset:
    paths: list
    seed: int | None = None
    profile: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.paths:
            raise ValueError("dataset must contain at least one path")

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    def __getitem__(self, i):
        return self.paths[i]


def seasonal_trend(times, amplitude: float = AMPLITUDE, period: float = PERIOD) -> np.ndarray:
    return amplitude * np.sin(2.0 * np.pi * np.asarray(times, dtype=float) / period)


def change_labels(times, change_time: float, end_time: float) -> np.ndarray:
    """1 on sample times inside the closed interval ``[change_time, end_time]``."""
    t = np.asarray(times, dtype=float)
    return ((t >= change_time) & (t <= end_time)).astype(np.int8)


def inject_change(series: TimeSeries, spec: ChangeSpec) -> LabeledPath:
    """Add the level shift of ``spec`` to ``series`` and label its support."""
    t = series.times
    if spec.change_time < t[0] or spec.end_time > t[-1]:
        raise ValueError(
            f"change [{spec.change_time}, {spec.end_time}] lies outside the series span [{t[0]}, {t[-1]}]"
        )
    labels = change_labels(t, spec.change_time, spec.end_time)
    values = series.values + spec.magnitude * labels
    return LabeledPath(series=series.with_values(values), labels=labels, change=spec)


def _profile_mu(profile: str, magnitude: float | None) -> float:
    key = str(profile).lower()
    if key not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    return PROFILES[key]["mu"] if magnitude is None else float(magnitude)


def path_seeds(profile: str, seed: int, index: int) -> tuple[int, np.random.Generator]:
    """Noise seed and change-parameter generator for one path."""
    ss = np.random.SeedSequence([int(seed), PROFILE_CODE[str(profile).lower()], int(index)])
    noise_seed = int(ss.generate_state(1, np.uint64)[0])
    return noise_seed, np.random.default_rng(ss.spawn(1)[0])


def generate_path(
    profile: str,
    seed: int,
    index: int,
    length: int = PATH_LENGTH,
    magnitude: float | None = None,
) -> LabeledPath:
    """Path ``index`` of the dataset ``(profile, seed)`` plus one week of preceding history.

    The noise is one fGn draw of ``2 * length`` samples; the first half is
    the change-free history, the second half drives the labeled path.
    """
    mu = _profile_mu(profile, magnitude)
    noise_seed, rng = path_seeds(profile, seed, index)
    theta = rng.uniform(PERIOD, 6 * PERIOD)
    duration = rng.uniform(*DURATION_RANGE)
    spec = ChangeSpec(change_time=theta, duration=duration, magnitude=mu)
    noise = NOISE_SIGMA * simulate_fgn(2 * length, NOISE_HURST, noise_seed).values
    times = np.arange(length, dtype=float)
    trend = seasonal_trend(times)
    hist_times = np.arange(-length, 0, dtype=float)
    history = TimeSeries(hist_times, seasonal_trend(hist_times) + noise[:length], 1.0)
    base = TimeSeries(times, trend + noise[length:], 1.0)
    path = inject_change(base, spec)
    if mu == 0.0:
        # a zero-size shift is not an observable change
        path.labels[:] = 0
    path.trend = trend
    path.history = history
    return path


def generate_artificial(profile: str, count: int, seed: int, magnitude: float | None = None) -> LabeledDataset:
    """Artificial-Easy (``mu = 5``) or Artificial-Hard (``mu = 3``) dataset.

    Each path has 2016 samples (one week at 5-minute sampling) with trend
    ``1.5 sin(2 pi t / 288)``, unit-scale fGn noise with ``H = 0.95``, a
    change time ``~ U(288, 1728)`` and duration ``~ U(5, 100)`` samples.
    ``magnitude`` overrides the profile's shift size.
    """
    count = int(count)
    if count < 1:
        raise ValueError("count must be >= 1")
    profile = str(profile).lower()
    mu = _profile_mu(profile, magnitude)
    paths = [generate_path(profile, seed, i, magnitude=mu) for i in range(count)]
    return LabeledDataset(paths=paths, seed=int(seed), profile=profile, meta={"mu": mu})


def compute_residuals(series: TimeSeries, trend) -> TimeSeries:
    """Standardized residuals ``(X_t - f_hat(t)) / sigma_hat(t)``.

    ``trend`` is a ``TrendEstimate``; ``sigma_hat`` at each sample comes
    from the window whose centre is nearest.
    """
    values = np.asarray(getattr(series, "values", series), dtype=float)
    fitted = np.asarray(trend.fitted, dtype=float)
    if fitted.shape != values.shape:
        raise ValueError("trend is not aligned with the series")
    if np.any(~np.isfinite(fitted)):
        raise ValueError("trend has uncovered samples")
    scale = trend.sigma_at()
    if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
        raise ValueError("degenerate scale: sigma_hat must be positive")
    resid = (values - fitted) / scale
    if isinstance(series, TimeSeries):
        return series.with_values(resid)
    return TimeSeries.from_values(resid)


# --------------------------------------------------------------------------- #
# files


def _fmt(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_keyvalue(path, items) -> None:
    lines = [f"{k}={v}" for k, v in items]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_keyvalue(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}: line {lineno} is not key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_series_csv(path, series: TimeSeries, labels=None) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "value", "label"])
    labels = np.zeros(len(series), dtype=int) if labels is None else np.asarray(labels)
    for t, v, y in zip(series.times, series.values, labels):
        writer.writerow([_fmt(t), repr(float(v)), int(y)])
    atomic_write_text(path, buf.getvalue())


def read_series_csv(path) -> tuple[TimeSeries, np.ndarray | None]:
    """Read a ``t,value[,label]`` CSV with a header row.

    Raises
    ------
    DataFormatError
        Missing column, unparsable cell, or non-uniform timestamps; the
        message names the file and the offending column or row.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        for col in ("t", "value"):
            if col not in header:
                raise DataFormatError(f"{path}: missing column '{col}'")
        it, iv = header.index("t"), header.index("value")
        il = header.index("label") if "label" in header else None
        times, values, labels = [], [], []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                times.append(float(row[it]))
                values.append(float(row[iv]))
                if il is not None:
                    labels.append(int(row[il]))
            except (ValueError, IndexError):
                raise DataFormatError(f"{path}: row {row_no}: cannot parse") from None
    if not times:
        raise DataFormatError(f"{path}: no data rows")
    t = np.asarray(times)
    if t.size > 1:
        d = np.diff(t)
        step = d[0]
        if step <= 0:
            raise DataFormatError(f"{path}: row 3: duplicate or decreasing timestamp")
        bad = np.flatnonzero(~np.isclose(d, step, rtol=1e-9, atol=1e-12))
        if bad.size:
            row = int(bad[0]) + 3
            kind = "duplicate timestamp" if d[bad[0]] == 0 else "timestamp gap"
            raise DataFormatError(f"{path}: row {row}: {kind}")
    else:
        step = 1.0
    v = np.asarray(values)
    if not np.all(np.isfinite(v)):
        raise DataFormatError(f"{path}: column 'value' has non-finite entries")
    series = TimeSeries(t, v, float(step))
    lab = None
    if il is not None:
        lab = np.asarray(labels, dtype=np.int8)
        if np.any((lab != 0) & (lab != 1)):
            raise DataFormatError(f"{path}: column 'label' must be 0/1")
    return series, lab


def write_dataset(dataset: LabeledDataset, out_dir, extra=()) -> Path:
    """One CSV per path (``t,value,label``), history CSVs and ``manifest.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = [
        ("schema", DATASET_SCHEMA),
        ("profile", dataset.profile or "custom"),
        ("seed", dataset.seed if dataset.seed is not None else ""),
        ("count", len(dataset)),
        ("length", len(dataset.paths[0].series)),
        ("trend_amplitude", _fmt(AMPLITUDE)),
        ("trend_period", _fmt(PERIOD)),
    ]
    items += list(extra)
    for i, path in enumerate(dataset.paths):
        name = f"path_{i:04d}.csv"
        write_series_csv(out_dir / name, path.series, path.labels)
        items.append((f"path.{i}", name))
        if path.history is not None:
            hname = f"path_{i:04d}_history.csv"
            write_series_csv(out_dir / hname, path.history)
            items.append((f"history.{i}", hname))
    manifest = out_dir / "manifest.txt"
    write_keyvalue(manifest, items)
    return manifest


def read_dataset(directory) -> LabeledDataset:
    """Load a dataset directory written by :func:`write_dataset`.

    The true trend is attached when the manifest names the synthetic
    profile (it is a deterministic function of time).
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.txt"
    if not manifest_path.exists():
        raise DataFormatError(f"{manifest_path}: manifest not found")
    manifest = read_keyvalue(manifest_path)
    if manifest.get("schema") != DATASET_SCHEMA:
        raise DataFormatError(f"{manifest_path}: unsupported schema {manifest.get('schema')!r}")
    try:
        count = int(manifest["count"])
    except (KeyError, ValueError):
        raise DataFormatError(f"{manifest_path}: missing or invalid entry 'count'") from None
    synthetic = manifest.get("profile") in PROFILES
    paths = []
    for i in range(count):
        key = f"path.{i}"
        if key not in manifest:
            raise DataFormatError(f"{manifest_path}: missing entry '{key}'")
        series, labels = read_series_csv(directory / manifest[key])
        if labels is None:
            raise DataFormatError(f"{directory / manifest[key]}: missing column 'label'")
        history = None
        if f"history.{i}" in manifest:
            history, _ = read_series_csv(directory / manifest[f"history.{i}"])
        trend = None
        if synthetic:
            trend = seasonal_trend(
                series.times, float(manifest["trend_amplitude"]), float(manifest["trend_period"])
            )
        paths.append(LabeledPath(series=series, labels=labels, trend=trend, history=history))
    seed = manifest.get("seed")
    return LabeledDataset(
        paths=paths,
        seed=int(seed) if seed not in (None, "") else None,
        profile=manifest.get("profile"),
        meta=manifest,
    )

