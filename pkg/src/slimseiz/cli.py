"""Command-line entry point: ``slimseiz {synth,ingest,select,train,eval,sweep}``.

Exit codes: 0 success, 1 internal error, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .chansel import SelectionConfig, format_report, parse_report, select_channels
from .eeg_io import SynthConfig, dump_annotations, load_annotations, read_edf, synth_eeg, write_edf
from .errors import DataError
from .mlcore import MetricsReport, compute_metrics
from .model import (
    ModelConfig,
    build_model,
    channel_sweep,
    checkpoint_arrays,
    evaluate,
    model_fit_predict,
    predict,
    restore_checkpoint,
    train,
)
from .nn import read_arrays, save_arrays
from .pipeline import (
    Holdout,
    KFold,
    WindowingConfig,
    balanced_preictal_stride,
    build_dataset,
    make_split,
    read_dataset,
    save_dataset,
)

log = logging.getLogger("slimseiz")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flag combination or missing input file (exit 2)."""


# ---------------------------------------------------------------------------
# small helpers


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _existing(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.6f}"


def metrics_csv(reports: Sequence[MetricsReport]) -> str:
    """Per-fold rows then one ``mean`` row (NaN-aware)."""
    lines = ["fold,acc,sens,spec"]
    for i, r in enumerate(reports):
        lines.append(f"{i},{_fmt(r.accuracy)},{_fmt(r.sensitivity)},{_fmt(r.specificity)}")
    cols = np.array([[r.accuracy, r.sensitivity, r.specificity] for r in reports], dtype=float)
    with np.errstate(all="ignore"):
        means = [
            float(np.nanmean(c)) if np.any(np.isfinite(c)) else float("nan") for c in cols.T
        ]
    lines.append("mean," + ",".join(_fmt(m) for m in means))
    return "\n".join(lines) + "\n"


def write_manifest(path: Path, items: Sequence[tuple[str, object]]) -> None:
    path.write_text("".join(f"{k}={v}\n" for k, v in items))


def read_manifest(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}: malformed manifest line {line!r}")
        out[key.strip()] = value.strip()
    return out


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_recordings(edf_paths: Sequence[str], ann_paths: Sequence[str] | None):
    """Read EDFs and attach seizure annotations (sibling ``.csv`` by default)."""
    if ann_paths and len(ann_paths) != len(edf_paths):
        raise UsageError(
            f"{len(edf_paths)} EDF file(s) but {len(ann_paths)} annotation file(s)"
        )
    recs = []
    for i, edf in enumerate(edf_paths):
        edf_p = _existing(edf, "EDF file")
        ann_p = _existing(ann_paths[i] if ann_paths else edf_p.with_suffix(".csv"), "annotation file")
        try:
            rec = read_edf(edf_p)
        except DataError as err:
            raise type(err)(f"{edf_p}: {err}") from err
        try:
            rec = rec.with_annotations(load_annotations(ann_p.read_text()))
        except DataError as err:
            raise type(err)(f"{ann_p}: {err}") from err
        recs.append(replace(rec, name=edf_p.stem))
    return recs


def _windowing(args, recordings) -> WindowingConfig:
    cfg = WindowingConfig(
        window_s=args.window,
        preictal_horizon_s=args.horizon,
        merge_gap_s=args.merge_gap,
        stride_other_s=args.stride_other,
    )
    if args.stride_preictal == "auto":
        cfg.stride_preictal_s = balanced_preictal_stride(recordings, cfg)
    else:
        try:
            cfg.stride_preictal_s = float(args.stride_preictal)
        except ValueError:
            raise UsageError(f"--stride-preictal must be a number or 'auto', got {args.stride_preictal!r}")
        if cfg.stride_preictal_s <= 0:
            raise UsageError("--stride-preictal must be positive")
    return cfg


def _model_config(args, in_channels: int, input_length: int) -> ModelConfig:
    return ModelConfig(
        in_channels=in_channels,
        input_length=input_length,
        mixer=args.mixer,
        ssm_state=args.ssm_state,
        loss_lambda=args.loss_lambda,
        temperature=args.temperature,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        dtype=args.dtype,
    )


def _selected_indices(labels: Sequence[str], wanted: Sequence[str]) -> list[int]:
    missing = [w for w in wanted if w not in labels]
    if missing:
        raise DataError(f"selected channel(s) {', '.join(missing)} not present in the dataset")
    return [list(labels).index(w) for w in wanted]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    informative = args.informative if args.informative is not None else [1, 3]
    cfg = SynthConfig(
        num_channels=args.channels,
        duration_s=args.duration,
        sample_rate_hz=args.fs,
        informative_channels=informative,
        preictal_onsets_s=args.onsets if args.onsets is not None else [2100.0, 4200.0, 6300.0],
        noise_sigma=args.noise_sigma,
        signature_amplitude=args.amplitude,
        ictal_duration_s=args.ictal,
        seed=args.seed,
    )
    rec = synth_eeg(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.name}.edf").write_bytes(write_edf(rec))
    (out / f"{args.name}.csv").write_text(dump_annotations(rec.annotations))
    print(f"wrote {out / (args.name + '.edf')} and {out / (args.name + '.csv')}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    recs = _load_recordings(args.edf, args.annotations)
    cfg = _windowing(args, recs)
    ds = build_dataset(recs, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    counts = ds.counts
    summary = (
        f"recordings={len(recs)}\n"
        f"channels={ds.X.shape[1]}\n"
        f"window_samples={ds.X.shape[2]}\n"
        f"sample_rate_hz={ds.sample_rate_hz:g}\n"
        f"stride_preictal_s={cfg.stride_preictal_s:g}\n"
        f"stride_other_s={cfg.stride_other_s:g}\n"
        f"preictal={counts[1]}\n"
        f"other={counts[0]}\n"
    )
    sys.stdout.write(summary)
    return EXIT_OK


def _selection_input(args):
    src = _existing(args.input, "input file")
    if src.suffix.lower() == ".edf":
        recs = _load_recordings([str(src)], [args.annotations] if args.annotations else None)
        return recs[0], recs[0].num_channels
    ds = read_dataset(src)
    return ds, ds.X.shape[1]


def cmd_select(args) -> int:
    if args.k < 1 or args.m < 1:
        raise UsageError("--k and --m must be >= 1")
    data, n_channels = _selection_input(args)
    if args.k > n_channels:
        raise UsageError(f"--k {args.k} exceeds the {n_channels} available channels")
    cfg = SelectionConfig(k=args.k, m=args.m, window_s=args.window, seed=args.seed, jobs=args.jobs)
    report = format_report(select_channels(data, cfg), cfg)
    _emit(report, args.out)
    return EXIT_OK


def _train_outputs(out: Path):
    return out / "model.ckpt", out / "metrics.csv", out / "train_log.csv", out / "manifest.txt"


def cmd_train(args) -> int:
    cache = _existing(args.cache, "dataset cache")
    ds = read_dataset(cache)
    channels = list(ds.channel_labels)
    if args.selection:
        channels = parse_report(_existing(args.selection, "selection report").read_text())
    ds = ds.select_channels(_selected_indices(ds.channel_labels, channels))

    if args.resume:
        ckpt = _existing(args.resume, "checkpoint")
        manifest = read_manifest(_existing(ckpt.parent / "manifest.txt", "checkpoint manifest"))
        cfg = ModelConfig.from_items(
            {k[len("model."):]: v for k, v in manifest.items() if k.startswith("model.")}
        )
        cfg = replace(cfg, epochs=args.epochs)
        if manifest.get("selection.channels", ",".join(channels)) != ",".join(channels):
            raise UsageError("resume: channel selection differs from the checkpoint's")
        params, opt, start_epoch = restore_checkpoint(cfg, read_arrays(ckpt))
        if start_epoch > cfg.epochs:
            raise UsageError(f"checkpoint is at epoch {start_epoch}, beyond --epochs {cfg.epochs}")
        test_fraction = float(manifest.get("train.test_fraction", args.test_fraction))
    else:
        cfg = _model_config(args, ds.X.shape[1], ds.X.shape[2])
        params, opt, start_epoch = build_model(cfg), None, 0
        test_fraction = args.test_fraction

    if test_fraction > 0:
        plan = make_split(len(ds), Holdout(test_fraction), cfg.seed, labels=ds.y)
        tr, te = next(plan.folds())
    else:
        tr, te = np.arange(len(ds)), np.arange(0)

    result = train(
        params, ds.subset(tr), cfg, optimizer=opt, start_epoch=start_epoch,
        epochs=cfg.epochs - start_epoch,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path, metrics_path, log_path, manifest_path = _train_outputs(out)
    save_arrays(checkpoint_arrays(params, result.optimizer, result.epochs_done), ckpt_path)
    rows = ["epoch,loss,train_acc"]
    for e, (loss, acc) in enumerate(zip(result.losses, result.accuracies), start=start_epoch):
        rows.append(f"{e},{loss:.8f},{acc:.6f}")
    log_path.write_text("\n".join(rows) + "\n")
    reports = []
    if te.size:
        reports.append(compute_metrics(predict(params, ds.X[te]), ds.y[te]))
        metrics_path.write_text(metrics_csv(reports))
    items = [
        ("version", __version__),
        ("seed", cfg.seed),
        ("data.file", cache.name),
        ("data.sha256", _sha256(cache)),
        ("selection.channels", ",".join(channels)),
        ("train.test_fraction", f"{test_fraction:g}"),
        ("train.n_train", tr.size),
        ("train.n_test", te.size),
        ("train.epochs_done", result.epochs_done),
        ("model.parameters", params.count()),
    ] + [(f"model.{k}", v) for k, v in cfg.to_items()]
    write_manifest(manifest_path, items)
    if reports:
        sys.stdout.write(metrics_csv(reports))
    return EXIT_OK


def cmd_eval(args) -> int:
    cache = _existing(args.cache, "dataset cache")
    ckpt = _existing(args.checkpoint, "checkpoint")
    manifest = read_manifest(_existing(ckpt.parent / "manifest.txt", "checkpoint manifest"))
    cfg = ModelConfig.from_items(
        {k[len("model."):]: v for k, v in manifest.items() if k.startswith("model.")}
    )
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    ds = read_dataset(cache)
    wanted = manifest.get("selection.channels", ",".join(ds.channel_labels)).split(",")
    ds = ds.select_channels(_selected_indices(ds.channel_labels, wanted))
    if ds.X.shape[2] != cfg.input_length:
        raise DataError(
            f"dataset windows have {ds.X.shape[2]} samples, the checkpoint expects {cfg.input_length}"
        )

    if args.kfold is None and args.holdout is None:
        params, _, _ = restore_checkpoint(cfg, read_arrays(ckpt))
        reports = [compute_metrics(predict(params, ds.X), ds.y)]
    else:
        kind = KFold(args.kfold) if args.kfold is not None else Holdout(args.holdout)
        plan = make_split(len(ds), kind, cfg.seed, labels=ds.y)
        reports = evaluate(ds, plan, cfg, model_fit_predict(cfg), jobs=args.jobs).folds
    _emit(metrics_csv(reports), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    recs = _load_recordings([args.edf], [args.annotations] if args.annotations else None)
    rec = recs[0]
    too_big = [k for k in args.k_values if k > rec.num_channels or k < 1]
    if too_big:
        raise UsageError(f"k values {too_big} are outside 1..{rec.num_channels}")
    windowing = _windowing(args, recs)
    fs = rec.sample_rate_hz
    length = int(round(windowing.window_s * fs))
    cfg = _model_config(args, rec.num_channels, length)
    selection = SelectionConfig(k=max(args.k_values), m=args.m, seed=args.seed, jobs=args.jobs)
    kind = KFold(args.kfold) if args.kfold is not None else Holdout(args.holdout or 0.2)
    rows = channel_sweep(
        rec, cfg, args.k_values, selection=selection, windowing=windowing,
        plan_kind=kind, include_all=not args.no_all,
    )
    lines = ["k,channels,acc,sens,spec"]
    for row in rows:
        r = row.result
        names = ";".join(rec.channel_labels[c] for c in row.channels)
        lines.append(
            f"{row.k},{names},{_fmt(r.mean_accuracy)},{_fmt(r.mean_sensitivity)},{_fmt(r.mean_specificity)}"
        )
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_windowing(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("windowing")
    g.add_argument("--window", type=float, default=4.0, help="segment length in seconds (default 4)")
    g.add_argument("--horizon", type=float, default=1800.0, help="pre-ictal horizon in seconds (default 1800)")
    g.add_argument("--merge-gap", type=float, default=1800.0,
                   help="seizures closer than this many seconds are merged (default 1800)")
    g.add_argument("--stride-preictal", default="auto",
                   help="pre-ictal stride in seconds, or 'auto' to balance the classes (default auto)")
    g.add_argument("--stride-other", type=float, default=None,
                   help="stride for non-pre-ictal windows in seconds (default: the window length)")


def _add_model(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--epochs", type=int, default=50, help="training epochs (default 50)")
    g.add_argument("--batch-size", type=int, default=64, help="minibatch size (default 64)")
    g.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default 1e-3)")
    g.add_argument("--loss-lambda", type=float, default=1.0,
                   help="weight of the supervised contrastive term (default 1.0)")
    g.add_argument("--temperature", type=float, default=0.07, help="contrastive temperature (default 0.07)")
    g.add_argument("--mixer", choices=("mamba", "conv", "none"), default="mamba",
                   help="sequence mixer after the conv trunk (default mamba)")
    g.add_argument("--ssm-state", type=int, default=8, help="SSM state size N (default 8)")
    g.add_argument("--dtype", choices=("float32", "float64"), default="float32",
                   help="parameter and activation precision (default float32)")


def build_parser() -> argparse.ArgumentParser:
    base = argparse.ArgumentParser(add_help=False)
    base.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    base.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False, parents=[base])
    common.add_argument("--seed", type=int, default=0, help="master seed for all randomness (default 0)")

    parser = argparse.ArgumentParser(prog="slimseiz", description="EEG seizure prediction toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic EDF + annotation CSV pair")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", default="synth", help="file stem (default synth)")
    p.add_argument("--channels", type=int, default=8, help="channel count (default 8)")
    p.add_argument("--duration", type=float, default=7200.0, help="length in seconds (default 7200)")
    p.add_argument("--fs", type=float, default=256.0, help="sample rate in Hz (default 256)")
    p.add_argument("--informative", type=_int_list, default=None,
                   help="comma-separated informative channel indices (default 1,3)")
    p.add_argument("--onsets", type=_float_list, default=None,
                   help="comma-separated seizure onsets in seconds (default 2100,4200,6300)")
    p.add_argument("--noise-sigma", type=float, default=20.0, help="background noise level (default 20)")
    p.add_argument("--amplitude", type=float, default=1.0,
                   help="pre-ictal rhythm amplitude relative to the noise (default 1.0)")
    p.add_argument("--ictal", type=float, default=60.0, help="seizure duration in seconds (default 60)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="window annotated EDFs into a dataset cache")
    p.add_argument("edf", nargs="+", help="EDF recordings of one patient")
    p.add_argument("--annotations", nargs="+", default=None,
                   help="seizure CSVs, one per EDF (default: the EDF path with a .csv suffix)")
    p.add_argument("--out", required=True, help="output SLSZ1 cache path")
    _add_windowing(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("select", parents=[common], help="rank channels and pick the top k")
    p.add_argument("input", help="dataset cache, or an EDF recording")
    p.add_argument("--annotations", default=None, help="seizure CSV for an EDF input (default: sibling .csv)")
    p.add_argument("--k", type=int, default=8, help="channels to keep (default 8)")
    p.add_argument("--m", type=int, default=30, help="random-split iterations (default 30)")
    p.add_argument("--window", type=float, default=5.0,
                   help="segment length for an EDF input in seconds (default 5)")
    p.add_argument("--out", default=None, help="report path (default stdout)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", parents=[common], help="train the network on a dataset cache")
    p.add_argument("cache", help="SLSZ1 dataset cache")
    p.add_argument("--selection", default=None, help="selection report restricting the channels")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--test-fraction", type=float, default=0.2,
                   help="stratified holdout fraction scored after training; 0 trains on all (default 0.2)")
    p.add_argument("--resume", default=None, help="continue from this checkpoint up to --epochs")
    _add_model(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[base], help="score a checkpoint or cross-validate its configuration")
    p.add_argument("--seed", type=int, default=None,
                   help="split and retraining seed (default: the checkpoint's seed)")
    p.add_argument("cache", help="SLSZ1 dataset cache")
    p.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    plan = p.add_mutually_exclusive_group()
    plan.add_argument("--kfold", type=int, default=None, help="stratified k-fold cross-validation")
    plan.add_argument("--holdout", type=float, default=None, help="stratified holdout test fraction")
    p.add_argument("--epochs", type=int, default=None, help="override the checkpoint's epoch count when retraining")
    p.add_argument("--out", default=None, help="metrics CSV path (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="evaluate the network for several channel counts")
    p.add_argument("edf", help="EDF recording")
    p.add_argument("--annotations", default=None, help="seizure CSV (default: sibling .csv)")
    p.add_argument("--k-values", type=_int_list, default=[4, 6, 8, 10],
                   help="comma-separated channel counts (default 4,6,8,10; k > C skipped with an error)")
    p.add_argument("--no-all", action="store_true", help="skip the all-channels row")
    p.add_argument("--m", type=int, default=30, help="selection iterations (default 30)")
    plan = p.add_mutually_exclusive_group()
    plan.add_argument("--kfold", type=int, default=None, help="stratified k-fold cross-validation")
    plan.add_argument("--holdout", type=float, default=None, help="holdout test fraction (default 0.2)")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    _add_windowing(p)
    _add_model(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as err:
        print(f"slimseiz {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as err:
        print(f"slimseiz {args.command}: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"slimseiz {args.command}: internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
