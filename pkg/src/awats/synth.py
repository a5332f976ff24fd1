"""Synthetic 4D benchmark datasets with controllable class information.

Each dataset is Gaussian noise plus, during task events, a per-ROI signal
whose placement is configurable: ``gradient_only`` plants a zero-mean linear
ramp across each ROI box (invisible to plain voxel averaging, visible to
axis profiles), ``mean_only`` shifts whole-ROI means, ``mixed`` does both.
ROIs are disjoint axis-aligned boxes so the zero-mean ramp construction is
exact. Fully deterministic per seed.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .seeding import derive_rng
from .volume_io import AtlasVolume, Fmri4D, VolumeHeader, write_volume
from .windowing import Event, EventTable

PLACEMENTS = ("gradient_only", "mean_only", "mixed")


@dataclass
class SynthConfig:
    grid: tuple[int, int, int] = (24, 24, 24)
    n_rois: int = 8
    n_conditions: int = 4
    n_subjects: int = 4
    runs_per_subject: int = 1
    events_per_run: int = 8
    event_duration_trs: int = 9
    window: int = 15  # midpoint spacing is window + 1 TRs
    tr_seconds: float = 1.0
    placement: str = "gradient_only"
    gradient_amp: float = 0.5
    mean_amp: float = 0.0
    noise_std: float = 1.0
    run_length_trs: int | None = None
    seed: int = 0

    def validate(self) -> None:
        if any(g < 4 for g in self.grid) or len(self.grid) != 3:
            raise ConfigError(f"grid must be 3 axes of size >= 4, got {self.grid}")
        if self.n_rois < 1 or self.n_conditions < 2:
            raise ConfigError("need at least 1 ROI and 2 conditions")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"unknown placement {self.placement!r}")
        if self.placement == "gradient_only" and self.mean_amp != 0:
            raise ConfigError("gradient_only requires mean_amp == 0")
        if self.placement == "mean_only" and self.gradient_amp != 0:
            raise ConfigError("mean_only requires gradient_amp == 0")
        if self.gradient_amp < 0 or self.mean_amp < 0 or self.noise_std <= 0:
            raise ConfigError("amplitudes must be >= 0 and noise_std > 0")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError("window must be odd and >= 1")
        if self.event_duration_trs < 1:
            raise ConfigError("event duration must be >= 1 TR")
        if min(self.n_subjects, self.runs_per_subject, self.events_per_run) < 1:
            raise ConfigError("subjects, runs and events must be >= 1")
        if self.tr_seconds <= 0:
            raise ConfigError("tr_seconds must be > 0")


@dataclass
class SynthDataset:
    config: SynthConfig
    atlas: AtlasVolume
    volumes: list[Fmri4D]
    events: list[EventTable]
    subject_ids: list[str]
    run_ids: list[str]
    ground_truth: dict = field(default_factory=dict)


def _lattice_dims(n_rois: int) -> tuple[int, int, int]:
    nx = max(1, round(n_rois ** (1.0 / 3.0)))
    while nx**3 < n_rois:
        nx += 1
    ny = nx
    nz = math.ceil(n_rois / (nx * ny))
    return nx, ny, nz


def roi_boxes(config: SynthConfig) -> list[tuple[slice, slice, slice]]:
    """Disjoint axis-aligned boxes, one per ROI, centered in lattice cells."""
    nx, ny, nz = _lattice_dims(config.n_rois)
    boxes = []
    cells = [(i, j, k) for i in range(nx) for j in range(ny) for k in range(nz)]
    for i, j, k in cells[: config.n_rois]:
        slices = []
        for axis, (cell_idx, n_cells) in enumerate(((i, nx), (j, ny), (k, nz))):
            size = config.grid[axis] // n_cells
            margin = max(1, size // 6)
            lo = cell_idx * size + margin
            hi = (cell_idx + 1) * size - margin
            if hi - lo < 3:
                raise ConfigError(
                    f"grid {config.grid} too small for {config.n_rois} ROI boxes"
                )
            slices.append(slice(lo, hi))
        boxes.append(tuple(slices))
    return boxes


def build_atlas(config: SynthConfig) -> AtlasVolume:
    labels = np.zeros(config.grid, dtype=np.int16)
    for roi_id, box in enumerate(roi_boxes(config), start=1):
        labels[box] = roi_id
    header = VolumeHeader(dims=config.grid, datatype="int16", voxel_sizes=(1.0, 1.0, 1.0))
    atlas = AtlasVolume(header=header, labels=labels, n_rois=config.n_rois)
    atlas.validate()
    return atlas


def _draw_patterns(config: SynthConfig):
    """Per-(ROI, condition) signal descriptors, distinct across conditions.

    Tables are drawn from the seed and redrawn until no two conditions share
    the same whole-brain pattern (possible only for tiny atlases).
    """
    n_r, n_c = config.n_rois, config.n_conditions
    for attempt in range(100):
        rng = derive_rng(config.seed, "patterns", attempt)
        axes = rng.integers(0, 3, size=(n_r, n_c))
        grad_signs = rng.choice([-1, 1], size=(n_r, n_c))
        mean_signs = rng.integers(-1, 2, size=(n_r, n_c))
        columns = []
        for c in range(n_c):
            if config.placement == "gradient_only":
                key = tuple(zip(axes[:, c], grad_signs[:, c]))
            elif config.placement == "mean_only":
                key = tuple(mean_signs[:, c])
            else:
                key = tuple(zip(axes[:, c], grad_signs[:, c], mean_signs[:, c]))
            columns.append(key)
        if len(set(columns)) == n_c:
            return axes, grad_signs, mean_signs
    raise ConfigError(
        "could not draw distinct per-condition signal patterns; "
        "increase n_rois or reduce n_conditions"
    )


def _event_schedule(config: SynthConfig, rng) -> tuple[list[tuple[int, int]], int]:
    """[(condition, midpoint TR)] plus the run length in TRs."""
    n_e = config.events_per_run
    half = (config.window - 1) // 2
    spacing = config.window + 1
    first_mid = half + 1
    mids = [first_mid + i * spacing for i in range(n_e)]
    needed = mids[-1] + half + 2
    length = config.run_length_trs if config.run_length_trs is not None else needed
    if needed > length:
        raise ConfigError(
            f"{n_e} events need {needed} TRs but run_length_trs={length}"
        )
    reps = math.ceil(n_e / config.n_conditions)
    conditions = rng.permutation(np.tile(np.arange(config.n_conditions), reps)[:n_e])
    return list(zip(conditions.tolist(), mids)), length


def generate_run(config: SynthConfig, subject: int, run: int):
    """One run's 4D volume and its event table, deterministic per seed."""
    config.validate()
    boxes = roi_boxes(config)
    axes, grad_signs, mean_signs = _draw_patterns(config)
    rng = derive_rng(config.seed, "run", subject, run)
    schedule, length = _event_schedule(config, rng)

    data = rng.standard_normal(config.grid + (length,), dtype=np.float32)
    data *= config.noise_std

    dur = config.event_duration_trs
    events = []
    for condition, mid in schedule:
        lo_tr = mid - dur // 2
        hi_tr = lo_tr + dur  # exclusive
        for roi_idx, box in enumerate(boxes):
            sub = data[box + (slice(lo_tr, hi_tr),)]
            if config.gradient_amp > 0:
                axis = int(axes[roi_idx, condition])
                extent = sub.shape[axis]
                ramp = np.linspace(-1.0, 1.0, extent, dtype=np.float32)
                ramp *= config.gradient_amp * grad_signs[roi_idx, condition]
                shape = [1, 1, 1, 1]
                shape[axis] = extent
                sub += ramp.reshape(shape)
            if config.mean_amp > 0:
                sub += np.float32(config.mean_amp * mean_signs[roi_idx, condition])
        onset = lo_tr * config.tr_seconds
        events.append(Event(int(condition), onset, dur * config.tr_seconds))

    header = VolumeHeader(
        dims=config.grid + (length,),
        datatype="float32",
        voxel_sizes=(1.0, 1.0, 1.0, config.tr_seconds),
    )
    volume = Fmri4D(header=header, data=data)
    table = EventTable(events=sorted(events, key=lambda e: e.onset),
                       n_conditions=config.n_conditions)
    table.validate()
    return volume, table


def iter_runs(config: SynthConfig):
    """Yield (subject_id, run_id, volume, events) without holding all runs."""
    for subject in range(config.n_subjects):
        for run in range(config.runs_per_subject):
            volume, events = generate_run(config, subject, run)
            yield f"sub{subject:03d}", f"run{run:02d}", volume, events


def ground_truth_tables(config: SynthConfig) -> dict:
    axes, grad_signs, mean_signs = _draw_patterns(config)
    return {
        "ramp_axes": axes.tolist(),
        "ramp_signs": grad_signs.tolist(),
        "mean_signs": mean_signs.tolist(),
    }


def generate(config: SynthConfig) -> SynthDataset:
    """Materialize the whole dataset in memory (small configs only)."""
    config.validate()
    volumes, tables, subject_ids, run_ids = [], [], [], []
    for subject_id, run_id, volume, events in iter_runs(config):
        volumes.append(volume)
        tables.append(events)
        subject_ids.append(subject_id)
        run_ids.append(run_id)
    return SynthDataset(
        config=config,
        atlas=build_atlas(config),
        volumes=volumes,
        events=tables,
        subject_ids=subject_ids,
        run_ids=run_ids,
        ground_truth=ground_truth_tables(config),
    )


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def write_dataset(config: SynthConfig, out_dir) -> dict:
    """Stream the dataset to disk; returns the manifest dictionary.

    Layout: atlas.nii, one <subject>_<run>.nii per run with a matching
    _events.csv, a consolidated events.csv, and manifest.json.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    atlas = build_atlas(config)
    write_volume(atlas, out / "atlas.nii")
    files = ["atlas.nii"]
    consolidated = ["subject,run,condition,onset,duration"]
    for subject_id, run_id, volume, events in iter_runs(config):
        stem = f"{subject_id}_{run_id}"
        write_volume(volume, out / f"{stem}.nii")
        with open(out / f"{stem}_events.csv", "w", newline="") as fh:
            fh.write("condition,onset,duration\n")
            for ev in events.events:
                fh.write(f"{ev.condition},{ev.onset!r},{ev.duration!r}\n")
                consolidated.append(
                    f"{subject_id},{run_id},{ev.condition},{ev.onset!r},{ev.duration!r}"
                )
        files.extend([f"{stem}.nii", f"{stem}_events.csv"])
    (out / "events.csv").write_text("\n".join(consolidated) + "\n")
    files.append("events.csv")
    manifest = {
        "command": "synth",
        "config": asdict(config),
        "files": sorted(files),
        "ground_truth_digest": _digest(ground_truth_tables(config)),
        "duration_seconds": round(time.time() - t0, 3),
        "artifact_version": 1,
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2) + "\n")
    tmp.replace(out / "manifest.json")
    return manifest
