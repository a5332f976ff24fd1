"""Minimal single-file NIfTI-1 reader and writer.

Covers exactly what the pipeline needs: 3D/4D volumes in float32, float64,
int16 or int32, stored as ".nii" (optionally gzip-compressed). Orientation
and affine fields are carried through verbatim but never interpreted; the
fMRI run and the atlas are required to live on the same voxel grid.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    TruncatedFileError,
    UnsupportedTypeError,
    ValidationError,
)

HEADER_SIZE = 348
VOX_OFFSET = 352  # header + 4-byte extension flag
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# name -> (nifti datatype code, bitpix, little-endian numpy dtype)
DTYPES = {
    "float32": (16, 32, "<f4"),
    "float64": (64, 64, "<f8"),
    "int16": (4, 16, "<i2"),
    "int32": (8, 32, "<i4"),
}
_CODE_TO_NAME = {code: name for name, (code, _, _) in DTYPES.items()}

# Full 348-byte layout; fields we interpret are pulled out by index below.
_HDR_FMT = "i10s18sihcc8h3f4h8f3fhBB4f2i80s24s2h6f12f16s4s"
_HDR_LE = struct.Struct("<" + _HDR_FMT)
_HDR_BE = struct.Struct(">" + _HDR_FMT)


@dataclass
class VolumeHeader:
    """Grid geometry and storage type of a volume.

    ``voxel_sizes`` holds mm spacings for the three spatial axes; for 4D
    volumes the fourth entry is the repetition time in seconds.
    """

    dims: tuple[int, ...]
    datatype: str
    voxel_sizes: tuple[float, ...]
    raw: bytes | None = field(default=None, repr=False)  # source header passthrough

    @property
    def tr_seconds(self) -> float:
        if len(self.dims) < 4:
            raise ValidationError("tr_seconds is only defined for 4D volumes")
        return float(self.voxel_sizes[3])

    def validate(self) -> None:
        if len(self.dims) not in (3, 4):
            raise ValidationError(f"expected 3 or 4 dims, got {len(self.dims)}")
        if any(d < 1 for d in self.dims):
            raise ValidationError(f"all dims must be >= 1, got {self.dims}")
        if self.datatype not in DTYPES:
            raise UnsupportedTypeError(f"unsupported datatype {self.datatype!r}")
        if len(self.voxel_sizes) != len(self.dims):
            raise ValidationError("voxel_sizes length must match dims")
        if len(self.dims) == 4 and not self.voxel_sizes[3] > 0:
            raise ValidationError("tr_seconds must be > 0 for 4D volumes")


@dataclass
class Fmri4D:
    """A BOLD volume sequence on a fixed grid (3D volumes ride along as T=1-like data)."""

    header: VolumeHeader
    data: np.ndarray

    def validate(self) -> None:
        self.header.validate()
        if tuple(self.data.shape) != self.header.dims:
            raise DimensionError(
                f"data shape {self.data.shape} does not match header dims {self.header.dims}"
            )
        if not np.isfinite(self.data).all():
            raise ValidationError("volume contains non-finite values")


@dataclass
class AtlasVolume:
    """Integer label volume; 0 is background, ROIs are labeled 1..n_rois."""

    header: VolumeHeader
    labels: np.ndarray
    n_rois: int

    def validate(self) -> None:
        self.header.validate()
        if len(self.header.dims) != 3:
            raise ValidationError("atlas must be a 3D volume")
        if tuple(self.labels.shape) != self.header.dims:
            raise DimensionError(
                f"labels shape {self.labels.shape} does not match header dims {self.header.dims}"
            )
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValidationError("atlas labels must be integer-typed")
        if self.labels.min() < 0:
            raise ValidationError("atlas labels must be non-negative")
        if self.n_rois < 1:
            raise ValidationError("atlas must contain at least one ROI")
        if self.labels.max() > self.n_rois:
            raise ValidationError(
                f"label {int(self.labels.max())} exceeds declared ROI count {self.n_rois}"
            )


def _open_for_read(path):
    with open(path, "rb") as fh:
        prefix = fh.read(2)
    if prefix == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _parse_header(blob: bytes):
    """Return (fields tuple, byteswapped flag) for a raw 348-byte header."""
    if len(blob) < HEADER_SIZE:
        raise TruncatedFileError(f"file too small for a NIfTI-1 header ({len(blob)} bytes)")
    fields = _HDR_LE.unpack_from(blob)
    dim0 = fields[7]
    if 1 <= dim0 <= 7:
        return fields, False
    fields = _HDR_BE.unpack_from(blob)
    if 1 <= fields[7] <= 7:
        return fields, True
    raise FormatError("dim[0] is invalid under either byte order; not a NIfTI-1 file")


# unpacked-field indices (see _HDR_FMT): dim[0] at 7, then intent_p1..3,
# intent_code, datatype, bitpix, slice_start, pixdim[8], vox_offset, scl_*.
_I_DIM = 7
_I_DATATYPE = 19
_I_PIXDIM = 22
_I_VOX_OFFSET = 30
_I_SCL_SLOPE = 31
_I_SCL_INTER = 32


def read_volume(path, as_atlas: bool = False):
    """Read a single-file NIfTI-1 volume.

    Returns an Fmri4D, or an AtlasVolume when ``as_atlas`` is set (the file
    must then hold a 3D integer volume). Big-endian files are byte-swapped;
    scl_slope/scl_inter scaling is applied when slope is neither 0 nor 1.
    """
    with _open_for_read(path) as fh:
        blob = fh.read()

    magic = blob[344:348]
    if magic != MAGIC_SINGLE:
        if magic == MAGIC_PAIR:
            raise FormatError("paired .hdr/.img NIfTI-1 is not supported, use single-file .nii")
        raise FormatError(f"bad magic {magic!r}; expected {MAGIC_SINGLE!r}")

    fields, swapped = _parse_header(blob)
    ndim = fields[_I_DIM]
    if ndim not in (3, 4):
        raise UnsupportedTypeError(f"only 3D/4D volumes are supported, got dim[0]={ndim}")
    dims = tuple(int(d) for d in fields[_I_DIM + 1 : _I_DIM + 1 + ndim])
    if any(d < 1 for d in dims):
        raise FormatError(f"non-positive dimension in header: {dims}")

    code = fields[_I_DATATYPE]
    if code not in _CODE_TO_NAME:
        raise UnsupportedTypeError(f"unsupported NIfTI datatype code {code}")
    dtname = _CODE_TO_NAME[code]
    np_dtype = np.dtype(DTYPES[dtname][2])
    if swapped:
        np_dtype = np_dtype.newbyteorder(">")

    voxel_sizes = tuple(float(v) for v in fields[_I_PIXDIM + 1 : _I_PIXDIM + 1 + ndim])
    vox_offset = int(fields[_I_VOX_OFFSET])
    if vox_offset < HEADER_SIZE:
        vox_offset = VOX_OFFSET

    n_items = int(np.prod(dims))
    n_bytes = n_items * np_dtype.itemsize
    if len(blob) - vox_offset < n_bytes:
        raise TruncatedFileError(
            f"header declares {n_bytes} data bytes but only {len(blob) - vox_offset} present"
        )
    flat = np.frombuffer(blob, dtype=np_dtype, count=n_items, offset=vox_offset)
    if swapped:
        flat = flat.astype(flat.dtype.newbyteorder("<"))
    data = flat.reshape(dims, order="F")

    slope = float(fields[_I_SCL_SLOPE])
    inter = float(fields[_I_SCL_INTER])
    scaled = slope not in (0.0, 1.0) or (slope != 0.0 and inter != 0.0)
    if scaled:
        out_dt = np.float64 if dtname == "float64" else np.float32
        data = data.astype(out_dt) * slope + inter
        dtname = "float64" if out_dt is np.float64 else "float32"

    header = VolumeHeader(
        dims=dims,
        datatype=dtname,
        voxel_sizes=voxel_sizes,
        raw=None if swapped else bytes(blob[:HEADER_SIZE]),
    )

    if as_atlas:
        if ndim != 3:
            raise ValidationError("atlas volumes must be 3D")
        if not np.issubdtype(data.dtype, np.integer):
            raise ValidationError("atlas volumes must use an integer datatype")
        atlas = AtlasVolume(header=header, labels=data, n_rois=int(data.max()))
        atlas.validate()
        return atlas

    vol = Fmri4D(header=header, data=data)
    vol.validate()
    return vol


def _build_header(volume) -> bytes:
    hdr = bytearray(volume.header.raw or bytes(HEADER_SIZE))
    dims = volume.header.dims
    ndim = len(dims)
    data = volume.labels if isinstance(volume, AtlasVolume) else volume.data
    dtname = str(data.dtype.name)
    if dtname not in DTYPES:
        raise UnsupportedTypeError(f"cannot write arrays of dtype {data.dtype}")
    code, bitpix, _ = DTYPES[dtname]

    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dim = [ndim] + list(dims) + [1] * (7 - ndim)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<hh", hdr, 70, code, bitpix)
    if volume.header.raw is None:
        pixdim0 = 1.0  # qfac; only meaningful with a qform, keep benign default
    else:
        pixdim0 = struct.unpack_from("<f", hdr, 76)[0]
    pixdim = [pixdim0] + list(volume.header.voxel_sizes) + [0.0] * (7 - ndim)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<ff", hdr, 112, 1.0, 0.0)  # scaling already applied on read
    hdr[344:348] = MAGIC_SINGLE
    return bytes(hdr)


def write_volume(volume, path) -> None:
    """Write a volume as little-endian single-file NIfTI-1 (gzip if path ends in .gz)."""
    volume.validate()
    data = volume.labels if isinstance(volume, AtlasVolume) else volume.data
    hdr = _build_header(volume)
    payload = data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes(order="F")
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(hdr)
        fh.write(b"\x00\x00\x00\x00")
        fh.write(payload)
