import numpy as np
import pytest

from awats.errors import ConfigError, ValidationError
from awats.parcellation import SeriesMatrix
from awats.resampling import ReprTensor
from awats.windowing import EventTable, Event, cut_windows, parse_events


def test_parse_consolidated_csv(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text("condition,onset,duration\n0,10.0,20.0\n1,40.0,20.0\n")
    table = parse_events(path, 2)
    assert table.n_conditions == 2
    assert [(e.condition, e.onset, e.duration) for e in table.events] == [
        (0, 10.0, 20.0),
        (1, 40.0, 20.0),
    ]


def test_parse_consolidated_csv_without_header(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text("1,5.0,2.0\n0,1.0,2.0\n")
    table = parse_events(path, 2)
    # sorted by onset
    assert [e.condition for e in table.events] == [0, 1]


def test_negative_duration_rejected(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text("0,3.0,-1.0\n")
    with pytest.raises(ValidationError):
        parse_events(path, 1)


def test_unknown_condition_rejected(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text("5,3.0,1.0\n")
    with pytest.raises(ValidationError):
        parse_events(path, 2)


def test_parse_ev_files(tmp_path):
    paths = []
    for c in range(3):
        p = tmp_path / f"cond{c}.txt"
        p.write_text(f"{10 * c}.0 5.0 1.0\n{10 * c + 100}.0 5.0 1.0\n")
        paths.append(p)
    table = parse_events(paths, 3)
    assert len(table.events) == 6
    assert sorted({e.condition for e in table.events}) == [0, 1, 2]


def _series(n_rois, n_t):
    rng = np.random.default_rng(0)
    return SeriesMatrix(values=rng.normal(size=(n_rois, n_t)), kind="ATS")


def test_window_indices_hand_case():
    # onset 10 s, duration 20 s, tr 1 s, W 15 -> mid 20, indices 13..27
    series = _series(2, 100)
    table = EventTable([Event(0, 10.0, 20.0)], n_conditions=1)
    samples, dropped = cut_windows(series, table, window=15, tr_seconds=1.0)
    assert dropped == 0
    np.testing.assert_allclose(samples[0].features, series.values[:, 13:28], rtol=1e-6)
    assert samples[0].features.shape == (2, 15)


def test_boundary_event_dropped():
    series = _series(2, 100)
    # mid_tr = 3 -> window start 3 - 7 = -4 < 0
    table = EventTable([Event(0, 1.0, 4.0)], n_conditions=1)
    samples, dropped = cut_windows(series, table, window=15, tr_seconds=1.0)
    assert samples == []
    assert dropped == 1


def test_even_window_rejected():
    with pytest.raises(ConfigError):
        cut_windows(_series(1, 10), EventTable([], 1), window=4, tr_seconds=1.0)


def test_count_conservation_and_shift():
    rng = np.random.default_rng(1)
    series = _series(3, 200)
    events = [
        Event(int(rng.integers(0, 2)), float(o), 6.0)
        for o in rng.uniform(0, 220, size=40)
    ]
    table = EventTable(sorted(events, key=lambda e: e.onset), n_conditions=2)
    samples, dropped = cut_windows(series, table, window=9, tr_seconds=1.0)
    assert len(samples) + dropped == 40

    # shifting all onsets by k TRs shifts all midpoints by exactly k
    k = 3
    shifted = EventTable(
        [Event(e.condition, e.onset + k * 1.0, e.duration) for e in table.events],
        n_conditions=2,
    )
    from awats.windowing import _midpoint_tr

    for ev, ev2 in zip(table.events, shifted.events):
        assert _midpoint_tr(ev2, 1.0) == _midpoint_tr(ev, 1.0) + k


def test_cut_windows_on_repr_tensor():
    rng = np.random.default_rng(2)
    tensor = ReprTensor(values=rng.normal(size=(4, 60, 9)).astype(np.float32), q=3)
    table = EventTable([Event(1, 20.0, 10.0)], n_conditions=2)
    samples, dropped = cut_windows(tensor, table, window=7, tr_seconds=1.0,
                                   subject_id="s1", run_id="r1")
    assert dropped == 0
    sample = samples[0]
    assert sample.features.shape == (4, 7, 9)
    assert sample.label == 1
    assert sample.subject_id == "s1"
    assert sample.run_id == "r1"
    np.testing.assert_allclose(sample.features, tensor.values[:, 22:29], rtol=1e-6)


def test_half_up_midpoint_rounding():
    from awats.windowing import _midpoint_tr

    # onset+dur/2 = 4.5 s at tr 1 -> rounds half-up to TR 5
    assert _midpoint_tr(Event(0, 0.0, 9.0), 1.0) == 5
    assert _midpoint_tr(Event(0, 0.0, 8.0), 1.0) == 4
    # tr scaling
    assert _midpoint_tr(Event(0, 10.0, 20.0), 2.0) == 10
