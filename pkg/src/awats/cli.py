"""Command-line entry point.

Subcommands: synth, extract, train, eval, shapley, embed. Every command
writes its outputs plus a manifest.json (config echo, input digests, output
list, seed, wall-clock duration) into the output directory. Exit codes:
0 success, 2 configuration error, 3 input validation error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AwatsError, ConfigError, FormatError, NumericError, ValidationError
from .evaluation import (
    SplitPlan,
    extract_awats_pca,
    metrics_to_csv,
    pca_embed_2d,
    separability_ratio,
    welch_ttest,
)
from .interpret import contributions_to_csv, load_network_map, network_csv, shapley_mc
from .neural.training import (
    TrainConfig,
    curves_to_csv,
    load_checkpoint,
    save_checkpoint,
    train_decoder,
)
from .parcellation import build_roi_index, extract_ats, series_to_csv
from .pipeline import load_dataset_windows, run_decoding_experiment
from .resampling import build_repr_tensor, save_repr_tensor
from .seeding import derive_rng
from .synth import SynthConfig, write_dataset
from .volume_io import read_volume
from .windowing import WindowSample

log = logging.getLogger("awats")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, config, inputs, outputs, seed, t0) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
        "seed": seed,
        "duration_seconds": round(time.time() - t0, 3),
        "artifact_version": 1,
        "package_version": __version__,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(out / "manifest.json")


def _resolve_threads(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("AWATS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _grid(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.replace("x", ",").split(",") if p]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid needs 3 axes, got {text!r}")
    return tuple(parts)


def cmd_synth(args) -> int:
    t0 = time.time()
    config = SynthConfig(
        grid=args.grid,
        n_rois=args.rois,
        n_conditions=args.conditions,
        n_subjects=args.subjects,
        runs_per_subject=args.runs_per_subject,
        events_per_run=args.events_per_run,
        event_duration_trs=args.event_duration,
        window=args.window,
        tr_seconds=args.tr,
        placement=args.placement,
        gradient_amp=args.g,
        mean_amp=args.m,
        noise_std=args.noise_std,
        run_length_trs=args.run_length,
        seed=args.seed,
    )
    manifest = write_dataset(config, args.out)
    log.info("wrote %d files to %s", len(manifest["files"]), args.out)
    return 0


def cmd_extract(args) -> int:
    t0 = time.time()
    volume = read_volume(args.fmri)
    atlas = read_volume(args.atlas, as_atlas=True)
    rois = build_roi_index(atlas)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.mode == "ats":
        series = extract_ats(volume, rois)
        series_to_csv(series, out)
    else:
        tensor = build_repr_tensor(volume, rois, args.q)
        save_repr_tensor(tensor, out)
    write_manifest(
        out.parent, "extract", {"mode": args.mode, "q": args.q},
        [args.fmri, args.atlas], [out], args.seed, t0,
    )
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
    )


def cmd_train(args) -> int:
    t0 = time.time()
    mode = "repr" if args.mode == "awats" else "series"
    samples, dataset_manifest = load_dataset_windows(
        args.data, mode, q=args.q, window=args.window
    )
    labels = np.array([s.label for s in samples])
    rng = derive_rng(args.seed, "train-split")
    perm = rng.permutation(len(samples))
    n_val = max(1, int(round(args.val_fraction * len(samples))))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    n_classes = int(dataset_manifest["config"]["n_conditions"])
    result = train_decoder(
        [samples[i] for i in train_idx],
        [samples[i] for i in val_idx],
        _train_config(args),
        args.mode,
        q=args.q if args.mode == "awats" else None,
        per_roi_extractor=args.per_roi_extractor,
        n_classes=n_classes,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / "model.awnn"
    save_checkpoint(result.model, checkpoint, args.window)
    curves = out / "curves.csv"
    curves_to_csv(result.curves, curves)
    write_manifest(
        out, "train",
        {
            "mode": args.mode, "q": args.q, "window": args.window,
            "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
            "per_roi_extractor": args.per_roi_extractor,
            "best_epoch": result.best_epoch,
            "best_val_accuracy": result.best_val_accuracy,
        },
        [Path(args.data) / "manifest.json"], [checkpoint, curves], args.seed, t0,
    )
    log.info("best validation accuracy %.4f at epoch %d",
             result.best_val_accuracy, result.best_epoch)
    return 0


def cmd_eval(args) -> int:
    t0 = time.time()
    mode = "repr" if args.mode == "awats" else "series"
    samples, dataset_manifest = load_dataset_windows(
        args.data, mode, q=args.q, window=args.window
    )
    plan = SplitPlan(
        repetitions=args.repetitions, seed=args.seed, unit=args.split_unit
    )
    reports, _ = run_decoding_experiment(
        samples, plan, _train_config(args), args.mode,
        q=args.q if args.mode == "awats" else None,
        per_roi_extractor=args.per_roi_extractor,
        n_classes=int(dataset_manifest["config"]["n_conditions"]),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.csv"
    metrics_to_csv(reports, metrics)
    write_manifest(
        out, "eval",
        {
            "mode": args.mode, "q": args.q, "window": args.window,
            "repetitions": args.repetitions, "split_unit": args.split_unit,
            "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
        },
        [Path(args.data) / "manifest.json"], [metrics], args.seed, t0,
    )
    accs = [r.accuracy for r in reports]
    log.info("accuracy %.4f +- %.4f over %d repetitions",
             float(np.mean(accs)), float(np.std(accs)), len(accs))
    return 0


def cmd_shapley(args) -> int:
    t0 = time.time()
    model, window = load_checkpoint(args.checkpoint)
    mode = "repr" if model.mode == "awats" else "series"
    samples, _ = load_dataset_windows(args.data, mode, q=model.q or 10, window=window)
    if args.max_samples and len(samples) > args.max_samples:
        rng = derive_rng(args.seed, "shapley-subset")
        picks = rng.choice(len(samples), size=args.max_samples, replace=False)
        samples = [samples[i] for i in sorted(picks)]
    cmap = shapley_mc(
        model, samples, n_sims=args.sims, baseline_kind=args.baseline,
        seed=args.seed, n_threads=_resolve_threads(args.threads),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "contributions.csv"]
    contributions_to_csv(cmap, outputs[0])
    inputs = [args.checkpoint, Path(args.data) / "manifest.json"]
    if args.networks:
        nets = load_network_map(args.networks)
        outputs.append(out / "networks.csv")
        network_csv(cmap, nets, outputs[-1])
        inputs.append(args.networks)
    write_manifest(
        out, "shapley",
        {"sims": args.sims, "baseline": args.baseline, "max_samples": args.max_samples},
        inputs, outputs, args.seed, t0,
    )
    return 0


def cmd_embed(args) -> int:
    t0 = time.time()
    mode = "repr" if args.method in ("awats_nn", "awats_pca") else "series"
    samples, dataset_manifest = load_dataset_windows(
        args.data, mode, q=args.q, window=args.window
    )
    extractor = None
    if args.method == "awats_nn":
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required for method awats_nn")
        model, _ = load_checkpoint(args.checkpoint)
        if model.extractor is None:
            raise ValidationError("checkpoint does not contain an extractor")
        extractor = model.extractor

    points, labels, subjects = [], [], []
    for sample in samples:
        feats = sample.features
        if args.method == "ats":
            series = feats  # (R, W)
        elif args.method == "awats_nn":
            series = extractor.forward_windows(
                feats[None].astype(np.float32), train=False
            )[0]
        else:
            from .parcellation import SeriesMatrix
            from .resampling import ReprTensor

            tensor = ReprTensor(values=feats.astype(np.float32), q=args.q)
            series = extract_awats_pca(tensor).values
        for t in range(series.shape[1]):
            points.append(series[:, t])
            labels.append(sample.label)
            subjects.append(sample.subject_id)
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    coords, degenerate = pca_embed_2d(points)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    embedding = out / "embedding.csv"
    with open(embedding, "w", newline="") as fh:
        fh.write("x,y,subject_id,label\n")
        for i in range(len(coords)):
            fh.write(f"{coords[i, 0]!r},{coords[i, 1]!r},{subjects[i]},{labels[i]}\n")
    ratios = out / "separability.csv"
    with open(ratios, "w", newline="") as fh:
        fh.write("space,label,ratio\n")
        for space, data in (("raw", points), ("embedded", coords)):
            fh.write(f"{space},condition,{separability_ratio(data, labels)!r}\n")
            if len(set(subjects)) > 1:
                fh.write(f"{space},subject,{separability_ratio(data, np.asarray(subjects))!r}\n")
    write_manifest(
        out, "embed",
        {"method": args.method, "q": args.q, "window": args.window,
         "degenerate": degenerate},
        [Path(args.data) / "manifest.json"], [embedding, ratios], args.seed, t0,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="awats",
        description="Regional time-series extraction, decoding and attribution",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: AWATS_THREADS or all cores)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=_grid, default=(24, 24, 24))
    p.add_argument("--rois", type=int, default=8)
    p.add_argument("--conditions", type=int, default=4)
    p.add_argument("--subjects", type=int, default=4)
    p.add_argument("--runs-per-subject", type=int, default=1)
    p.add_argument("--events-per-run", type=int, default=8)
    p.add_argument("--event-duration", type=int, default=9, metavar="TRS")
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--tr", type=float, default=1.0)
    p.add_argument("--placement", choices=["gradient_only", "mean_only", "mixed"],
                   default="gradient_only")
    p.add_argument("--g", type=float, default=0.5, help="gradient amplitude")
    p.add_argument("--m", type=float, default=0.0, help="mean-shift amplitude")
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--run-length", type=int, default=None, metavar="TRS")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract ATS or representation tensors")
    common(p)
    p.add_argument("--fmri", required=True)
    p.add_argument("--atlas", required=True)
    p.add_argument("--mode", choices=["ats", "repr"], required=True)
    p.add_argument("--q", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    def training_flags(p):
        p.add_argument("--data", required=True)
        p.add_argument("--mode", choices=["awats", "ats"], required=True)
        p.add_argument("--q", type=int, default=10)
        p.add_argument("--window", type=int, default=15)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--batch-size", type=int, default=128)
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--per-roi-extractor", action="store_true")
        p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a decoder on a dataset")
    common(p)
    training_flags(p)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="repeated-split decoding experiment")
    common(p)
    training_flags(p)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--split-unit", choices=["sample", "subject"], default="sample")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("shapley", help="per-ROI attribution for a trained model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sims", type=int, default=64)
    p.add_argument("--baseline", choices=["dataset_mean", "zeros"], default="dataset_mean")
    p.add_argument("--networks", default=None, help="CSV of roi_id,network_id,name")
    p.add_argument("--max-samples", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shapley)

    p = sub.add_parser("embed", help="2-D embedding and separability ratios")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["awats_nn", "awats_pca", "ats"], required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--q", type=int, default=10)
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except AwatsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
