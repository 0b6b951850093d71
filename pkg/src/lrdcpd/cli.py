"""Command line: ``lrdcpd {simulate,train,detect,evaluate}``.

Options may also come from a ``key=value`` file given by ``--config``;
keys are option names with dashes or underscores, and flags on the command
line win. Every command records its resolved configuration in a manifest.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage
error. Failures print one JSON line on stderr, for example
``{"error": "usage", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, evalkit
from .change_model import (
    PROFILES,
    DataFormatError,
    TimeSeries,
    atomic_write_text,
    compute_residuals,
    generate_artificial,
    read_dataset,
    read_keyvalue,
    read_series_csv,
    write_dataset,
    write_keyvalue,
)
from .ensemble import detect, load_model, save_model
from .experiments import (
    FittedPipeline,
    PipelineOptions,
    evaluate_scores,
    fit_pipeline,
    residualize,
    score_procedures,
    trend_accuracy,
)
from .trend_filter import DEFAULT_WINDOW, extract_trend

logger = logging.getLogger(__name__)

__all__ = ["main", "build_parser", "parse_args", "UsageError"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _open_unit(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {value}")
    return value


def _add_pipeline_options(p):
    g = p.add_argument_group("trend filter and ensemble")
    g.add_argument("--window-width", type=_positive_int, default=DEFAULT_WINDOW, help="trend window in samples")
    g.add_argument("--hurst-init", type=_open_unit, default=0.5, help="initial Hurst exponent")
    g.add_argument("--no-correct", action="store_true", help="skip the DFA Hurst correction")
    g.add_argument("--lags", type=_nonneg_int, default=1, help="ensemble lag depth p")
    g.add_argument("--epochs", type=_nonneg_int, default=200)
    g.add_argument("--step", type=_positive_float, default=0.1, help="initial gradient step")
    g.add_argument("--c-inf", type=_positive_float, default=1.0, help="false-alarm cost")
    g.add_argument("--c-0", type=_positive_float, default=1.0, help="false-silence cost")
    g.add_argument("--quantile", type=float, default=0.99, help="detector calibration quantile")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lrdcpd", description="Change detection in seasonal long-range-dependent series.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="write an artificial labeled dataset")
    p.add_argument("--config", type=Path)
    p.add_argument("--profile", choices=sorted(PROFILES), default="easy")
    p.add_argument("--count", type=_positive_int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--magnitude", type=float, default=None, help="override the profile's shift size")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("train", help="calibrate detectors and train the ensemble")
    p.add_argument("--config", type=Path)
    p.add_argument("--data", type=Path, required=True, help="training dataset directory")
    p.add_argument("--out", type=Path, required=True, help="model file")
    _add_pipeline_options(p)

    p = sub.add_parser("detect", help="run a trained model on one series")
    p.add_argument("--config", type=Path)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help="CSV with columns t,value[,label]")
    p.add_argument("--out", type=Path, required=True, help="segments CSV (start,end,peak)")
    p.add_argument("--threshold", type=_open_unit, default=None, help="alarm level h_A (default: the model's)")

    p = sub.add_parser("evaluate", help="curves and summary for every procedure")
    p.add_argument("--config", type=Path)
    p.add_argument("--test", type=Path, required=True, help="test dataset directory")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", type=Path, help="model file written by train")
    src.add_argument("--train", type=Path, help="training dataset directory (train in process)")
    p.add_argument("--no-rrmse", action="store_true", help="skip the trend accuracy table")
    _add_pipeline_options(p)
    return parser


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _config_argv(sub, path: Path) -> list:
    """Translate a key=value file into command-line tokens for ``sub``."""
    try:
        items = read_keyvalue(path)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    options = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                options[opt[2:].replace("-", "_")] = (opt, action)
    argv = []
    for key, value in items.items():
        name = key.replace("-", "_")
        if name not in options or name == "config":
            raise UsageError(f"{path}: unknown config key {key!r}")
        opt, action = options[name]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(opt)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"{path}: {key} expects true or false")
        else:
            argv += [opt, value]
    return argv


def _find_config(argv):
    """``(command index, config path)`` from raw tokens, before full parsing."""
    idx = next((i for i, tok in enumerate(argv) if not tok.startswith("-")), None)
    if idx is None:
        return None, None
    rest = argv[idx + 1 :]
    for i, tok in enumerate(rest):
        if tok == "--config" and i + 1 < len(rest):
            return idx, Path(rest[i + 1])
        if tok.startswith("--config="):
            return idx, Path(tok.split("=", 1)[1])
    return idx, None


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    idx, config = _find_config(argv)
    if config is not None and argv[idx] in COMMANDS:
        # config tokens first, so flags given on the command line override them
        extra = _config_argv(_subparser(parser, argv[idx]), config)
        argv = argv[: idx + 1] + extra + argv[idx + 1 :]
    args = parser.parse_args(argv)
    if hasattr(args, "quantile") and not 0.0 < args.quantile <= 1.0:
        raise UsageError("--quantile must lie in (0, 1]")
    return args


def _pipeline_options(args) -> PipelineOptions:
    return PipelineOptions(
        window_width=args.window_width,
        hurst_init=args.hurst_init,
        correct=not args.no_correct,
        lags=args.lags,
        epochs=args.epochs,
        step=args.step,
        cost_false_alarm=args.c_inf,
        cost_false_silence=args.c_0,
        quantile=args.quantile,
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def _config_items(args) -> list:
    skip = {"config", "verbose"}
    return [(f"config.{k}", _fmt(v)) for k, v in sorted(vars(args).items()) if k not in skip]


def _manifest(path, args, extra=()) -> None:
    items = [("schema", "lrdcpd-run/1"), ("version", __version__), ("command", args.command)]
    write_keyvalue(path, items + _config_items(args) + list(extra))


# --------------------------------------------------------------------------- #
# commands


def run_simulate(args) -> int:
    dataset = generate_artificial(args.profile, args.count, args.seed, magnitude=args.magnitude)
    extra = [("mu", _fmt(dataset.meta["mu"])), ("version", __version__)] + _config_items(args)
    write_dataset(dataset, args.out, extra=extra)
    return 0


def _model_extra(fitted: FittedPipeline) -> list:
    opt = fitted.options
    items = [
        ("pipeline.window_width", opt.window_width),
        ("pipeline.hurst_init", _fmt(opt.hurst_init)),
        ("pipeline.correct", _fmt(opt.correct)),
    ]
    items += [(f"ewma_threshold.{k}", _fmt(v)) for k, v in sorted(fitted.ewma_threshold.items())]
    items += [(f"ewma_cusum.{k}", _fmt(v)) for k, v in sorted(fitted.ewma_cusum.items())]
    items += [("train.final_loss", _fmt(fitted.history[-1])), ("train.initial_loss", _fmt(fitted.history[0]))]
    return items


def _load_fitted(path: Path) -> FittedPipeline:
    model = load_model(path)
    kv = read_keyvalue(path)
    if model.bank is None or model.bank.thresholds is None:
        raise DataFormatError(f"{path}: model has no calibrated detector bank")
    try:
        opt = PipelineOptions(
            window_width=int(kv["pipeline.window_width"]),
            hurst_init=float(kv["pipeline.hurst_init"]),
            correct=kv["pipeline.correct"] == "true",
            lags=model.lags,
            cost_false_alarm=model.cost_false_alarm,
            cost_false_silence=model.cost_false_silence,
            quantile=model.bank.quantile,
        )
        thr = {k.split(".", 1)[1]: float(v) for k, v in kv.items() if k.startswith("ewma_threshold.")}
        cus = {k.split(".", 1)[1]: float(v) for k, v in kv.items() if k.startswith("ewma_cusum.")}
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing key {exc.args[0]!r}") from None
    return FittedPipeline(opt, model.bank, model, thr, cus)


def run_train(args) -> int:
    dataset = read_dataset(args.data)
    fitted = fit_pipeline(dataset, _pipeline_options(args))
    save_model(fitted.model, args.out, extra=_model_extra(fitted))
    _manifest(args.out.with_name(args.out.name + ".manifest.txt"), args)
    return 0


def detect_series(fitted: FittedPipeline, series: TimeSeries, threshold: float | None = None):
    """Segments ``(start_time, end_time, peak a_t)`` of one series."""
    opt = fitted.options
    est = extract_trend(series, opt.window_width, opt.hurst_init, correct=opt.correct)
    resid = compute_residuals(series, est).values
    model = fitted.model
    if threshold is not None:
        model = replace(model, threshold=threshold)
    traj = detect(model, fitted.bank.signals(resid))
    return [(series.times[a], series.times[b], float(np.max(traj.values[a : b + 1]))) for a, b in traj.segments]


def run_detect(args) -> int:
    fitted = _load_fitted(args.model)
    series, _ = read_series_csv(args.input)
    segments = detect_series(fitted, series, args.threshold)
    buf = io.StringIO()
    buf.write("start,end,peak\n")
    for a, b, peak in segments:
        buf.write(f"{_fmt_time(a)},{_fmt_time(b)},{peak!r}\n")
    atomic_write_text(args.out, buf.getvalue())
    _manifest(args.out.with_name(args.out.name + ".manifest.txt"), args, [("segments", len(segments))])
    return 0


def _fmt_time(t) -> str:
    t = float(t)
    return str(int(t)) if t.is_integer() and abs(t) < 1e15 else repr(t)


_TABLE_NAMES = {"ewma": "EWMA", "pca": "PCA", "pca_pretraining": "PCA-Pretraining", "ours": "Ours"}


def run_evaluate(args) -> int:
    test = read_dataset(args.test)
    if args.model is not None:
        fitted = _load_fitted(args.model)
    else:
        fitted = fit_pipeline(read_dataset(args.train), _pipeline_options(args))
    c_inf, c_0 = fitted.model.cost_false_alarm, fitted.model.cost_false_silence
    scores = score_procedures(fitted, test, residualize(test, fitted.options))
    results = evaluate_scores(scores, test, c_inf, c_0)
    out = Path(args.out)
    summary = {"schema": "lrdcpd-summary/1", "test_paths": len(test)}
    for name, res in results.items():
        evalkit.write_curve_csv(out / f"pr_{name}.csv", res["pr"], "pr")
        evalkit.write_curve_csv(out / f"arer_{name}.csv", res["arer"], "arer")
        summary[f"pr_auc.{name}"] = res["pr_auc"]
        summary[f"arer_auc.{name}"] = res["arer_auc"]
    if not args.no_rrmse:
        if any(p.trend is None for p in test):
            raise DataFormatError(f"{args.test}: trend accuracy needs synthetic data with a known trend")
        table = trend_accuracy(test, fitted.options)
        for key, (trend_err, fc_err) in table.items():
            summary[f"rrmse_trend.{_TABLE_NAMES[key]}"] = trend_err
            summary[f"rrmse_forecast.{_TABLE_NAMES[key]}"] = fc_err
    evalkit.write_summary(out / "summary.txt", summary)
    _manifest(out / "manifest.txt", args)
    return 0


COMMANDS = {"simulate": run_simulate, "train": run_train, "detect": run_detect, "evaluate": run_evaluate}


def _fail(kind: str, exc: BaseException, code: int) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except (DataFormatError, FileNotFoundError) as exc:
        return _fail("input", exc, 1)
    except Exception as exc:  # noqa: BLE001 - reported as a one-line diagnostic
        logger.debug("failure", exc_info=True)
        return _fail("runtime", exc, 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
