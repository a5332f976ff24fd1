import gzip
import struct

import numpy as np
import pytest

from awats.errors import (
    FormatError,
    TruncatedFileError,
    UnsupportedTypeError,
    ValidationError,
)
from awats.volume_io import (
    AtlasVolume,
    Fmri4D,
    VolumeHeader,
    read_volume,
    write_volume,
)


def reference_nifti_bytes(data, voxel_sizes, datatype_code, bitpix, endian="<"):
    """Independent writer assembled field-by-field from the published layout."""
    hdr = bytearray(348)
    struct.pack_into(endian + "i", hdr, 0, 348)
    dims = data.shape
    dim = [len(dims)] + list(dims) + [1] * (7 - len(dims))
    struct.pack_into(endian + "8h", hdr, 40, *dim)
    struct.pack_into(endian + "h", hdr, 70, datatype_code)
    struct.pack_into(endian + "h", hdr, 72, bitpix)
    pixdim = [1.0] + list(voxel_sizes) + [0.0] * (7 - len(voxel_sizes))
    struct.pack_into(endian + "8f", hdr, 76, *pixdim)
    struct.pack_into(endian + "f", hdr, 108, 352.0)
    hdr[344:348] = b"n+1\x00"
    body = data.astype(data.dtype.newbyteorder(endian)).tobytes(order="F")
    return bytes(hdr) + b"\x00" * 4 + body


def make_volume(shape, dtype=np.float32, tr=2.0, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=shape).astype(dtype)
    sizes = (1.5, 1.5, 1.5, tr)[: len(shape)]
    header = VolumeHeader(dims=shape, datatype=np.dtype(dtype).name, voxel_sizes=sizes)
    return Fmri4D(header=header, data=data)


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.int16, np.int32])
def test_roundtrip_all_dtypes(tmp_path, dtype):
    shape = (4, 4, 4, 3)
    if np.issubdtype(dtype, np.integer):
        data = np.arange(np.prod(shape), dtype=dtype).reshape(shape)
        header = VolumeHeader(shape, np.dtype(dtype).name, (1.0, 1.0, 1.0, 2.0))
        vol = Fmri4D(header=header, data=data)
    else:
        vol = make_volume(shape, dtype)
    path = tmp_path / "vol.nii"
    write_volume(vol, path)
    back = read_volume(path)
    assert back.header.dims == vol.header.dims
    assert back.header.voxel_sizes == pytest.approx(vol.header.voxel_sizes)
    assert back.header.datatype == vol.header.datatype
    np.testing.assert_array_equal(back.data, vol.data)


def test_roundtrip_gzip(tmp_path):
    vol = make_volume((5, 4, 3, 2))
    path = tmp_path / "vol.nii.gz"
    write_volume(vol, path)
    with open(path, "rb") as fh:
        assert fh.read(2) == b"\x1f\x8b"
    back = read_volume(path)
    np.testing.assert_array_equal(back.data, vol.data)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.nii"
    blob = bytearray(reference_nifti_bytes(
        np.zeros((2, 2, 2), np.float32), (1, 1, 1), 16, 32))
    blob[344:348] = b"abcd"
    path.write_bytes(blob)
    with pytest.raises(FormatError):
        read_volume(path)


def test_paired_hdr_img_rejected(tmp_path):
    path = tmp_path / "pair.nii"
    blob = bytearray(reference_nifti_bytes(
        np.zeros((2, 2, 2), np.float32), (1, 1, 1), 16, 32))
    blob[344:348] = b"ni1\x00"
    path.write_bytes(blob)
    with pytest.raises(FormatError, match="single-file"):
        read_volume(path)


def test_atlas_read_from_reference_writer(tmp_path):
    # 6x5x4 int16 volume with labels {0,1,2}
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 3, size=(6, 5, 4)).astype(np.int16)
    labels[0, 0, 0] = 1
    labels[1, 0, 0] = 2
    path = tmp_path / "atlas.nii"
    path.write_bytes(reference_nifti_bytes(labels, (2.0, 2.0, 2.0), 4, 16))
    atlas = read_volume(path, as_atlas=True)
    assert isinstance(atlas, AtlasVolume)
    assert atlas.n_rois == 2
    assert atlas.header.dims == (6, 5, 4)
    assert atlas.header.voxel_sizes == pytest.approx((2.0, 2.0, 2.0))
    np.testing.assert_array_equal(atlas.labels, labels)


def test_float_volume_rejected_as_atlas(tmp_path):
    vol = make_volume((3, 3, 3))
    path = tmp_path / "f.nii"
    write_volume(vol, path)
    with pytest.raises(ValidationError):
        read_volume(path, as_atlas=True)


def test_written_file_size_is_exact(tmp_path):
    header = VolumeHeader((2, 2, 2), "float64", (1.0, 1.0, 1.0))
    vol = Fmri4D(header=header, data=np.zeros((2, 2, 2)))
    path = tmp_path / "zero.nii"
    write_volume(vol, path)
    assert path.stat().st_size == 352 + 8 * 8


def test_nan_rejected_on_write(tmp_path):
    vol = make_volume((3, 3, 3, 2))
    vol.data[1, 1, 1, 0] = np.nan
    with pytest.raises(ValidationError):
        write_volume(vol, tmp_path / "nan.nii")


def test_big_endian_detected_and_swapped(tmp_path):
    rng = np.random.default_rng(2)
    data = rng.normal(size=(3, 4, 5)).astype(np.float32)
    path = tmp_path / "be.nii"
    path.write_bytes(reference_nifti_bytes(data, (1.0, 1.0, 1.0), 16, 32, endian=">"))
    back = read_volume(path)
    np.testing.assert_array_equal(back.data, data)


def test_scl_slope_applied(tmp_path):
    data = np.arange(8, dtype=np.int16).reshape(2, 2, 2)
    blob = bytearray(reference_nifti_bytes(data, (1.0, 1.0, 1.0), 4, 16))
    struct.pack_into("<ff", blob, 112, 2.5, -1.0)  # scl_slope, scl_inter
    path = tmp_path / "scaled.nii"
    path.write_bytes(blob)
    back = read_volume(path)
    np.testing.assert_allclose(back.data, data * 2.5 - 1.0, rtol=1e-6)
    assert back.header.datatype == "float32"


def test_unsupported_datatype_code(tmp_path):
    data = np.zeros((2, 2, 2), np.float32)
    blob = bytearray(reference_nifti_bytes(data, (1.0, 1.0, 1.0), 16, 32))
    struct.pack_into("<h", blob, 70, 2)  # uint8
    path = tmp_path / "u8.nii"
    path.write_bytes(blob)
    with pytest.raises(UnsupportedTypeError):
        read_volume(path)


def test_truncated_file(tmp_path):
    vol = make_volume((4, 4, 4, 2))
    path = tmp_path / "t.nii"
    write_volume(vol, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 64])
    with pytest.raises(TruncatedFileError):
        read_volume(path)


def test_fortran_order_layout(tmp_path):
    # the first stored voxel after the header must be (0,0,0), second (1,0,0)
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    header = VolumeHeader((2, 3, 4), "float32", (1.0, 1.0, 1.0))
    path = tmp_path / "order.nii"
    write_volume(Fmri4D(header=header, data=data), path)
    raw = np.frombuffer(path.read_bytes()[352:], dtype="<f4")
    assert raw[0] == data[0, 0, 0]
    assert raw[1] == data[1, 0, 0]


def test_header_invariants():
    with pytest.raises(ValidationError):
        VolumeHeader((0, 2, 2), "float32", (1.0, 1.0, 1.0)).validate()
    with pytest.raises(UnsupportedTypeError):
        VolumeHeader((2, 2, 2), "uint8", (1.0, 1.0, 1.0)).validate()
    with pytest.raises(ValidationError):
        VolumeHeader((2, 2, 2, 2), "float32", (1.0, 1.0, 1.0, 0.0)).validate()
    hdr = VolumeHeader((2, 2, 2, 3), "float32", (1.0, 1.0, 1.0, 0.72))
    hdr.validate()
    assert hdr.tr_seconds == pytest.approx(0.72)
