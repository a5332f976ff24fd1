"""Wiring between the generator/parser layer and training/evaluation.

Builds labeled window samples from synthetic configs or on-disk datasets
(streaming runs so full 4D volumes never accumulate in memory), and runs
the repeated-split decoding experiment.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .evaluation import MetricsReport, SplitPlan, compute_metrics, make_splits
from .neural.models import ArchConfig
from .neural.training import TrainConfig, TrainResult, stack_features, train_decoder
from .parcellation import build_roi_index, extract_ats
from .resampling import build_repr_tensor
from .seeding import derive_entropy
from .synth import SynthConfig, build_atlas, iter_runs
from .volume_io import read_volume
from .windowing import WindowSample, cut_windows, parse_events


def synth_windows(
    config: SynthConfig,
    q: int = 10,
    window: int = 15,
    modes: tuple[str, ...] = ("repr", "series"),
) -> dict[str, list[WindowSample]]:
    """Generate a synthetic dataset and cut windows in the requested modes.

    Runs are generated, reduced to series/representations and discarded one
    at a time. Returns {"repr": [...]} and/or {"series": [...]}.
    """
    atlas = build_atlas(config)
    rois = build_roi_index(atlas)
    out: dict[str, list[WindowSample]] = {mode: [] for mode in modes}
    for subject_id, run_id, volume, events in iter_runs(config):
        if "series" in modes:
            series = extract_ats(volume, rois)
            samples, _ = cut_windows(series, events, window, config.tr_seconds,
                                     subject_id, run_id)
            out["series"].extend(samples)
        if "repr" in modes:
            tensor = build_repr_tensor(volume, rois, q)
            samples, _ = cut_windows(tensor, events, window, config.tr_seconds,
                                     subject_id, run_id)
            out["repr"].extend(samples)
    return out


def load_dataset_windows(
    data_dir,
    mode: str,
    q: int = 10,
    window: int = 15,
) -> tuple[list[WindowSample], dict]:
    """Cut windows from a dataset directory written by the synth command."""
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"no manifest.json in {root}")
    manifest = json.loads(manifest_path.read_text())
    config = manifest["config"]
    tr_seconds = float(config["tr_seconds"])
    n_conditions = int(config["n_conditions"])
    atlas = read_volume(root / "atlas.nii", as_atlas=True)
    rois = build_roi_index(atlas)
    samples: list[WindowSample] = []
    run_stems = sorted(
        f[: -len(".nii")] for f in manifest["files"]
        if f.endswith(".nii") and f != "atlas.nii"
    )
    for stem in run_stems:
        volume = read_volume(root / f"{stem}.nii")
        events = parse_events(root / f"{stem}_events.csv", n_conditions)
        if mode == "series":
            data = extract_ats(volume, rois)
        elif mode == "repr":
            data = build_repr_tensor(volume, rois, q)
        else:
            raise ValidationError(f"unknown extraction mode {mode!r}")
        subject_id, _, run_id = stem.partition("_")
        cut, _ = cut_windows(data, events, window, tr_seconds, subject_id, run_id)
        samples.extend(cut)
    return samples, manifest


def run_decoding_experiment(
    samples: list[WindowSample],
    plan: SplitPlan,
    train_config: TrainConfig,
    mode: str,
    q: int | None = None,
    arch: ArchConfig | None = None,
    per_roi_extractor: bool = False,
    n_classes: int | None = None,
    keep_models: bool = False,
) -> tuple[list[MetricsReport], list[TrainResult]]:
    """Repeated random splits -> train -> test metrics, one report per repetition."""
    labels = np.array([s.label for s in samples])
    subjects = [s.subject_id for s in samples]
    n_classes = n_classes or int(labels.max()) + 1
    reports: list[MetricsReport] = []
    results: list[TrainResult] = []
    for rep, (train_idx, val_idx, test_idx) in enumerate(
        make_splits(labels, plan, subjects)
    ):
        rep_seed = derive_entropy(train_config.seed, "repetition", rep)[0] % (2**63)
        cfg = replace(train_config, seed=rep_seed)
        result = train_decoder(
            [samples[i] for i in train_idx],
            [samples[i] for i in val_idx],
            cfg,
            mode,
            q=q,
            arch=arch,
            per_roi_extractor=per_roi_extractor,
            n_classes=n_classes,
        )
        test_feats, test_labels = stack_features([samples[i] for i in test_idx])
        predictions = result.model.predict_logits(test_feats).argmax(axis=1)
        reports.append(compute_metrics(predictions, test_labels, n_classes))
        if keep_models:
            results.append(result)
    return reports, results
