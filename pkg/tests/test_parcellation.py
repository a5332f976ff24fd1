import numpy as np
import pytest

from awats.errors import DimensionError, EmptyRoiError
from awats.parcellation import (
    axis_means,
    axis_means_series,
    build_roi_index,
    extract_ats,
    series_to_csv,
)
from awats.volume_io import AtlasVolume, Fmri4D, VolumeHeader


def make_atlas(labels, n_rois=None):
    labels = np.asarray(labels, dtype=np.int16)
    header = VolumeHeader(labels.shape, "int16", (1.0,) * 3)
    return AtlasVolume(header=header, labels=labels,
                       n_rois=n_rois if n_rois is not None else int(labels.max()))


def make_fmri(data):
    data = np.asarray(data, dtype=np.float64)
    sizes = (1.0, 1.0, 1.0, 1.0)[: data.ndim]
    header = VolumeHeader(data.shape, "float64", sizes)
    return Fmri4D(header=header, data=data)


def test_single_voxel_roi():
    labels = np.zeros((6, 6, 6), dtype=np.int16)
    labels[2, 3, 4] = 1
    rois = build_roi_index(make_atlas(labels))
    roi = rois[0]
    np.testing.assert_array_equal(roi.index_x, [2])
    np.testing.assert_array_equal(roi.index_y, [3])
    np.testing.assert_array_equal(roi.index_z, [4])
    assert roi.clipped_mask.shape == (1, 1, 1)
    assert roi.clipped_mask.all()
    assert roi.voxel_count == 1


def test_disconnected_mask_selects_occupied_planes_only():
    labels = np.zeros((5, 5, 5), dtype=np.int16)
    labels[1, 1, 1] = 1
    labels[3, 1, 1] = 1
    roi = build_roi_index(make_atlas(labels))[0]
    np.testing.assert_array_equal(roi.index_x, [1, 3])  # plane x=2 excluded
    assert roi.clipped_mask.shape == (2, 1, 1)
    assert roi.voxel_count == 2


def test_full_cube_clipping_is_identity():
    labels = np.ones((4, 4, 4), dtype=np.int16)
    roi = build_roi_index(make_atlas(labels))[0]
    np.testing.assert_array_equal(roi.index_x, np.arange(4))
    np.testing.assert_array_equal(roi.index_y, np.arange(4))
    np.testing.assert_array_equal(roi.index_z, np.arange(4))
    assert roi.clipped_mask.all()


def test_empty_roi_error_names_label():
    labels = np.zeros((4, 4, 4), dtype=np.int16)
    labels[0, 0, 0] = 1
    with pytest.raises(EmptyRoiError) as err:
        build_roi_index(make_atlas(labels, n_rois=2))
    assert err.value.label == 2


def test_ats_constant_volume():
    labels = np.zeros((4, 4, 4), dtype=np.int16)
    labels[:2, :2, :2] = 1
    labels[2:, 2:, 2:] = 2
    rois = build_roi_index(make_atlas(labels))
    fmri = make_fmri(np.full((4, 4, 4, 3), 7.5))
    series = extract_ats(fmri, rois)
    assert series.kind == "ATS"
    np.testing.assert_allclose(series.values, 7.5)


def test_ats_two_voxel_mean():
    labels = np.zeros((3, 3, 3), dtype=np.int16)
    labels[0, 0, 0] = 1
    labels[1, 0, 0] = 1
    data = np.zeros((3, 3, 3, 1))
    data[0, 0, 0, 0] = 1.0
    data[1, 0, 0, 0] = 3.0
    series = extract_ats(make_fmri(data), build_roi_index(make_atlas(labels)))
    assert series.values[0, 0] == pytest.approx(2.0)


def test_ats_matches_brute_force():
    rng = np.random.default_rng(42)
    labels = rng.integers(0, 4, size=(8, 8, 8)).astype(np.int16)
    for lab in (1, 2, 3):  # ensure all present
        labels.flat[lab] = lab
    data = rng.normal(size=(8, 8, 8, 5))
    series = extract_ats(make_fmri(data), build_roi_index(make_atlas(labels)))

    expected = np.zeros((3, 5))
    for roi_id in (1, 2, 3):
        for t in range(5):
            total, count = 0.0, 0
            for x in range(8):
                for y in range(8):
                    for z in range(8):
                        if labels[x, y, z] == roi_id:
                            total += data[x, y, z, t]
                            count += 1
            expected[roi_id - 1, t] = total / count
    np.testing.assert_allclose(series.values, expected, rtol=1e-6)


def test_axis_means_hand_case_2x2x1():
    labels = np.zeros((2, 2, 1), dtype=np.int16)
    labels[:, :, 0] = 1
    roi = build_roi_index(make_atlas(labels))[0]
    tr = np.array([[[1.0], [2.0]], [[3.0], [4.0]]])  # rows indexed by x
    v_x, v_y, v_z = axis_means(tr, roi)
    np.testing.assert_allclose(v_x, [1.5, 3.5])
    np.testing.assert_allclose(v_y, [2.0, 3.0])
    np.testing.assert_allclose(v_z, [2.5])


def test_axis_means_constant_roi():
    labels = np.zeros((4, 4, 4), dtype=np.int16)
    labels[1:3, 1:4, 2] = 1
    roi = build_roi_index(make_atlas(labels))[0]
    tr = np.full((4, 4, 4), 3.25)
    for v in axis_means(tr, roi):
        np.testing.assert_allclose(v, 3.25)


def test_axis_means_l_shaped_mask():
    labels = np.zeros((3, 3, 3), dtype=np.int16)
    tr = np.zeros((3, 3, 3))
    for (x, y, z), value in {(0, 0, 0): 1.0, (1, 0, 0): 2.0, (1, 1, 0): 3.0}.items():
        labels[x, y, z] = 1
        tr[x, y, z] = value
    roi = build_roi_index(make_atlas(labels))[0]
    v_x, v_y, v_z = axis_means(tr, roi)
    np.testing.assert_allclose(v_x, [1.0, 2.5])
    np.testing.assert_allclose(v_y, [1.5, 3.0])
    np.testing.assert_allclose(v_z, [2.0])


def test_mass_consistency_random_rois():
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 4, size=(9, 8, 7)).astype(np.int16)
    for lab in (1, 2, 3):
        labels.flat[lab * 11] = lab
    data = rng.normal(size=(9, 8, 7, 4))
    fmri = make_fmri(data)
    rois = build_roi_index(make_atlas(labels))
    ats = extract_ats(fmri, rois)
    for roi in rois:
        v_x, v_y, v_z = axis_means_series(fmri, roi)
        row = roi.roi_id - 1
        for counts, v in ((roi.plane_counts_x, v_x),
                          (roi.plane_counts_y, v_y),
                          (roi.plane_counts_z, v_z)):
            weighted = counts @ v
            np.testing.assert_allclose(
                weighted, roi.voxel_count * ats.values[row], rtol=1e-6
            )


def test_axis_means_series_matches_single_tr():
    rng = np.random.default_rng(9)
    labels = np.zeros((5, 5, 5), dtype=np.int16)
    labels[1:4, 0:3, 2:5] = 1
    data = rng.normal(size=(5, 5, 5, 6))
    fmri = make_fmri(data)
    roi = build_roi_index(make_atlas(labels))[0]
    v_x_all, v_y_all, v_z_all = axis_means_series(fmri, roi, chunk=2)
    for t in range(6):
        v_x, v_y, v_z = axis_means(data[..., t], roi)
        np.testing.assert_allclose(v_x_all[:, t], v_x)
        np.testing.assert_allclose(v_y_all[:, t], v_y)
        np.testing.assert_allclose(v_z_all[:, t], v_z)


def test_label_permutation_permutes_rows():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 4, size=(6, 6, 6)).astype(np.int16)
    for lab in (1, 2, 3):
        labels.flat[lab * 5] = lab
    data = rng.normal(size=(6, 6, 6, 3))
    fmri = make_fmri(data)
    base = extract_ats(fmri, build_roi_index(make_atlas(labels)))

    swap = labels.copy()  # swap labels 1 <-> 3
    swap[labels == 1] = 3
    swap[labels == 3] = 1
    permuted = extract_ats(fmri, build_roi_index(make_atlas(swap)))
    np.testing.assert_allclose(permuted.values[0], base.values[2])
    np.testing.assert_allclose(permuted.values[2], base.values[0])
    np.testing.assert_allclose(permuted.values[1], base.values[1])


def test_grid_mismatch_rejected():
    labels = np.ones((4, 4, 4), dtype=np.int16)
    rois = build_roi_index(make_atlas(labels))
    with pytest.raises(DimensionError):
        extract_ats(make_fmri(np.zeros((5, 4, 4, 2))), rois)


def test_series_csv_layout(tmp_path):
    labels = np.ones((2, 2, 2), dtype=np.int16)
    rois = build_roi_index(make_atlas(labels))
    series = extract_ats(make_fmri(np.ones((2, 2, 2, 3))), rois)
    path = tmp_path / "series.csv"
    series_to_csv(series, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "roi,0,1,2"
    assert lines[1].startswith("1,")
