"""Fixed-length linear resampling of axis profiles and the R x T x 3q tensor.

A length-p profile v is resampled to q points by reading v at the positions
i*p/q (1-based, i = 1..q): exact hits return the stored element, everything
else interpolates linearly between the two neighbors, with neighbors clamped
to the valid range so short profiles extend as steps rather than extrapolate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError, FormatError, TruncatedFileError
from .parcellation import RoiIndex, axis_means_series
from .volume_io import Fmri4D

CACHE_MAGIC = b"AWRT"
CACHE_VERSION = 1


@dataclass
class ReprTensor:
    """Per-ROI, per-TR concatenation of the three resampled axis profiles."""

    values: np.ndarray  # (R, T, 3q) float32
    q: int

    def validate(self) -> None:
        if self.q < 2:
            raise ConfigError(f"resample size must be >= 2, got {self.q}")
        if self.values.ndim != 3 or self.values.shape[2] != 3 * self.q:
            raise ConfigError(
                f"tensor shape {self.values.shape} inconsistent with q={self.q}"
            )
        if not np.isfinite(self.values).all():
            raise DomainError("representation tensor contains non-finite values")


@lru_cache(maxsize=512)
def _plan(p: int, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """0-based gather indices (j, k) and weights for resampling length p to q.

    Positions are kept in integer arithmetic (i*p vs q) so exact hits are
    detected without float comparisons.
    """
    idx = np.arange(1, q + 1) * p  # i*p, to be read at position idx/q
    j = idx // q
    exact = idx % q == 0
    w = (idx - j * q) / q
    k = np.minimum(j + 1, p)
    j = np.maximum(j, 1)
    w = np.where(exact | (j == k), 0.0, w)
    k = np.where(exact, idx // q, k)
    j = np.where(exact, idx // q, j)
    return j - 1, k - 1, w


def resample_vector(v: np.ndarray, q: int) -> np.ndarray:
    """Resample a 1-D profile to exactly q samples."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size == 0:
        raise DomainError("resample_vector requires a nonempty 1-D vector")
    if q < 1:
        raise DomainError(f"resample size must be >= 1, got {q}")
    j, k, w = _plan(v.size, q)
    vj = v[j]
    return vj + (v[k] - vj) * w


def resample_columns(vm: np.ndarray, q: int) -> np.ndarray:
    """Resample each column of a (p, T) profile stack; returns (q, T)."""
    if vm.ndim != 2 or vm.shape[0] == 0:
        raise DomainError("resample_columns requires a nonempty (p, T) array")
    j, k, w = _plan(vm.shape[0], q)
    vj = vm[j]
    return vj + (vm[k] - vj) * w[:, None]


def build_repr_tensor(fmri: Fmri4D, rois: list[RoiIndex], q: int) -> ReprTensor:
    """Axis means -> per-axis resample -> concatenated (R, T, 3q) tensor."""
    if q < 2:
        raise ConfigError(f"resample size must be >= 2, got {q}")
    data = fmri.data if fmri.data.ndim == 4 else fmri.data[..., None]
    n_t = data.shape[3]
    out = np.empty((len(rois), n_t, 3 * q), dtype=np.float32)
    for row, roi in enumerate(rois):
        v_x, v_y, v_z = axis_means_series(fmri, roi)
        out[row, :, :q] = resample_columns(v_x, q).T
        out[row, :, q : 2 * q] = resample_columns(v_y, q).T
        out[row, :, 2 * q :] = resample_columns(v_z, q).T
    tensor = ReprTensor(values=out, q=q)
    tensor.validate()
    return tensor


def save_repr_tensor(tensor: ReprTensor, path) -> None:
    tensor.validate()
    n_r, n_t, _ = tensor.values.shape
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<4I", CACHE_VERSION, n_r, n_t, tensor.q))
        fh.write(np.ascontiguousarray(tensor.values, dtype="<f4").tobytes())


def load_repr_tensor(path) -> ReprTensor:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CACHE_MAGIC:
        raise FormatError(f"bad cache magic {blob[:4]!r}")
    version, n_r, n_t, q = struct.unpack_from("<4I", blob, 4)
    if version != CACHE_VERSION:
        raise FormatError(f"unsupported cache version {version}")
    need = n_r * n_t * 3 * q
    data = np.frombuffer(blob, dtype="<f4", count=-1, offset=20)
    if data.size < need:
        raise TruncatedFileError(f"cache holds {data.size} values, expected {need}")
    tensor = ReprTensor(values=data[:need].reshape(n_r, n_t, 3 * q).copy(), q=int(q))
    tensor.validate()
    return tensor


def repr_to_csv(tensor: ReprTensor, path) -> None:
    """Inspection export: one row per (roi, tr)."""
    n_r, n_t, width = tensor.values.shape
    with open(path, "w", newline="") as fh:
        fh.write("roi,tr," + ",".join(f"c{i}" for i in range(width)) + "\n")
        for r in range(n_r):
            for t in range(n_t):
                row = tensor.values[r, t]
                fh.write(f"{r + 1},{t}," + ",".join(repr(float(v)) for v in row) + "\n")
