"""Per-ROI masks, bounding indices, plain averaged series, and axis means.

For every ROI the atlas mask is clipped to the planes it actually occupies
along each axis. The classic regional series (ATS) is the voxel mean per TR;
the spatial representation of an ROI at one TR is the triple of masked mean
profiles along x, y and z of the clipped box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DimensionError, EmptyRoiError, ValidationError
from .volume_io import AtlasVolume, Fmri4D

SeriesKind = Literal["ATS", "AWATS", "AWATS_PCA"]


@dataclass
class RoiIndex:
    """Clipped mask and occupied-plane bookkeeping for one ROI."""

    roi_id: int
    index_x: np.ndarray
    index_y: np.ndarray
    index_z: np.ndarray
    clipped_mask: np.ndarray  # bool, (X', Y', Z')
    voxel_count: int
    plane_counts_x: np.ndarray
    plane_counts_y: np.ndarray
    plane_counts_z: np.ndarray
    grid: tuple[int, int, int]

    def validate(self) -> None:
        if self.clipped_mask.shape != (
            len(self.index_x),
            len(self.index_y),
            len(self.index_z),
        ):
            raise DimensionError("clipped mask shape does not match index lists")
        if self.voxel_count != int(self.clipped_mask.sum()):
            raise ValidationError("voxel_count does not match clipped mask")
        for counts in (self.plane_counts_x, self.plane_counts_y, self.plane_counts_z):
            if counts.min() < 1:
                raise ValidationError("clipping left an empty plane")


@dataclass
class SeriesMatrix:
    """Regional time series, one row per ROI."""

    values: np.ndarray  # (R, T)
    kind: SeriesKind

    def validate(self) -> None:
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise DimensionError(f"expected a nonempty R x T matrix, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValidationError("series contains non-finite values")


def build_roi_index(atlas: AtlasVolume) -> list[RoiIndex]:
    """Clip every ROI of the atlas to its occupied planes, in label order."""
    atlas.validate()
    labels = atlas.labels
    rois = []
    for roi_id in range(1, atlas.n_rois + 1):
        mask = labels == roi_id
        if not mask.any():
            raise EmptyRoiError(roi_id)
        ix = np.flatnonzero(mask.any(axis=(1, 2)))
        iy = np.flatnonzero(mask.any(axis=(0, 2)))
        iz = np.flatnonzero(mask.any(axis=(0, 1)))
        clipped = mask[np.ix_(ix, iy, iz)]
        roi = RoiIndex(
            roi_id=roi_id,
            index_x=ix,
            index_y=iy,
            index_z=iz,
            clipped_mask=clipped,
            voxel_count=int(mask.sum()),
            plane_counts_x=clipped.sum(axis=(1, 2)),
            plane_counts_y=clipped.sum(axis=(0, 2)),
            plane_counts_z=clipped.sum(axis=(0, 1)),
            grid=tuple(labels.shape),
        )
        roi.validate()
        rois.append(roi)
    return rois


def _check_grid(shape3, rois: list[RoiIndex]) -> None:
    for roi in rois:
        if tuple(shape3) != roi.grid:
            raise DimensionError(
                f"volume grid {tuple(shape3)} does not match ROI grid {roi.grid}"
            )


def extract_ats(fmri: Fmri4D, rois: list[RoiIndex]) -> SeriesMatrix:
    """Mean signal over each ROI's voxels per TR."""
    data = fmri.data if fmri.data.ndim == 4 else fmri.data[..., None]
    _check_grid(data.shape[:3], rois)
    out = np.empty((len(rois), data.shape[3]), dtype=np.float64)
    for row, roi in enumerate(rois):
        box = data[np.ix_(roi.index_x, roi.index_y, roi.index_z)]
        out[row] = box[roi.clipped_mask].mean(axis=0)
    return SeriesMatrix(values=out, kind="ATS")


def axis_means(fmri_tr: np.ndarray, roi: RoiIndex) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Masked mean profiles of a single TR along x, y, z of the clipped box.

    Denominators are the per-plane voxel counts, which are >= 1 because
    clipping keeps occupied planes only.
    """
    if fmri_tr.ndim != 3:
        raise DimensionError("axis_means expects a single 3D TR volume")
    _check_grid(fmri_tr.shape, [roi])
    box = fmri_tr[np.ix_(roi.index_x, roi.index_y, roi.index_z)] * roi.clipped_mask
    v_x = box.sum(axis=(1, 2)) / roi.plane_counts_x
    v_y = box.sum(axis=(0, 2)) / roi.plane_counts_y
    v_z = box.sum(axis=(0, 1)) / roi.plane_counts_z
    return v_x, v_y, v_z


def axis_means_series(
    fmri: Fmri4D, roi: RoiIndex, chunk: int = 128
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """axis_means for every TR at once; returns (X', T), (Y', T), (Z', T)."""
    data = fmri.data if fmri.data.ndim == 4 else fmri.data[..., None]
    _check_grid(data.shape[:3], rois=[roi])
    n_t = data.shape[3]
    v_x = np.empty((len(roi.index_x), n_t))
    v_y = np.empty((len(roi.index_y), n_t))
    v_z = np.empty((len(roi.index_z), n_t))
    mask4 = roi.clipped_mask[..., None]
    for lo in range(0, n_t, chunk):
        hi = min(lo + chunk, n_t)
        box = data[:, :, :, lo:hi][np.ix_(roi.index_x, roi.index_y, roi.index_z)] * mask4
        v_x[:, lo:hi] = box.sum(axis=(1, 2)) / roi.plane_counts_x[:, None]
        v_y[:, lo:hi] = box.sum(axis=(0, 2)) / roi.plane_counts_y[:, None]
        v_z[:, lo:hi] = box.sum(axis=(0, 1)) / roi.plane_counts_z[:, None]
    return v_x, v_y, v_z


def series_to_csv(series: SeriesMatrix, path) -> None:
    """Rows are ROIs (label id first), columns are TR indices."""
    n_t = series.values.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write("roi," + ",".join(str(t) for t in range(n_t)) + "\n")
        for i, row in enumerate(series.values, start=1):
            fh.write(str(i) + "," + ",".join(repr(float(v)) for v in row) + "\n")
