"""Event tables and midpoint-centered window cutting.

Events come either as one whitespace-separated "onset duration amplitude"
file per condition or as a consolidated CSV with condition,onset,duration
rows. Each event yields one sample: a window of odd length W centered on
the TR nearest the event's temporal midpoint; windows that would leave the
run are dropped.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .parcellation import SeriesMatrix
from .resampling import ReprTensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Event:
    condition: int
    onset: float
    duration: float


@dataclass
class EventTable:
    events: list[Event]
    n_conditions: int

    def validate(self) -> None:
        if self.n_conditions < 1:
            raise ValidationError("n_conditions must be positive")
        for ev in self.events:
            if ev.onset < 0:
                raise ValidationError(f"negative onset {ev.onset}")
            if ev.duration <= 0:
                raise ValidationError(f"non-positive duration {ev.duration}")
            if not 0 <= ev.condition < self.n_conditions:
                raise ValidationError(
                    f"condition {ev.condition} outside 0..{self.n_conditions - 1}"
                )


@dataclass
class WindowSample:
    """One labeled decoding sample: (R, W) series or (R, W, 3q) representations."""

    features: np.ndarray
    label: int
    subject_id: str = ""
    run_id: str = ""


def _parse_ev_file(path, condition: int) -> list[Event]:
    events = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ValidationError(f"{path}:{line_no}: expected 'onset duration [amplitude]'")
        events.append(Event(condition, float(parts[0]), float(parts[1])))
    return events


def _parse_consolidated_csv(path) -> list[Event]:
    events = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if line_no == 1 and not parts[0].lstrip("-").isdigit():
            continue  # header row
        if len(parts) < 3:
            raise ValidationError(f"{path}:{line_no}: expected 'condition,onset,duration'")
        events.append(Event(int(parts[0]), float(parts[1]), float(parts[2])))
    return events


def parse_events(source, n_conditions: int) -> EventTable:
    """Parse events from a consolidated CSV path or a sequence of EV file paths.

    With a sequence, file i holds the events of condition i; amplitude
    columns are ignored.
    """
    if isinstance(source, (str, Path)):
        events = _parse_consolidated_csv(source)
    else:
        paths = list(source)
        if len(paths) > n_conditions:
            raise ValidationError(
                f"{len(paths)} EV files but only {n_conditions} conditions declared"
            )
        events = []
        for condition, path in enumerate(paths):
            events.extend(_parse_ev_file(path, condition))
    table = EventTable(events=sorted(events, key=lambda e: e.onset), n_conditions=n_conditions)
    table.validate()
    return table


def _midpoint_tr(event: Event, tr_seconds: float) -> int:
    # round half up, 0-based TR index
    return int(math.floor((event.onset + event.duration / 2.0) / tr_seconds + 0.5))


def cut_windows(
    data: SeriesMatrix | ReprTensor,
    events: EventTable,
    window: int = 15,
    tr_seconds: float = 1.0,
    subject_id: str = "",
    run_id: str = "",
) -> tuple[list[WindowSample], int]:
    """Cut one midpoint-centered window per event.

    Returns (samples, dropped) where dropped counts events whose window
    would cross a run boundary.
    """
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window length must be odd and >= 1, got {window}")
    if tr_seconds <= 0:
        raise ConfigError(f"tr_seconds must be > 0, got {tr_seconds}")
    events.validate()

    values = data.values
    n_t = values.shape[1]
    half = (window - 1) // 2
    samples: list[WindowSample] = []
    dropped = 0
    for ev in events.events:
        mid = _midpoint_tr(ev, tr_seconds)
        lo, hi = mid - half, mid + half
        if lo < 0 or hi > n_t - 1:
            dropped += 1
            continue
        feats = np.ascontiguousarray(values[:, lo : hi + 1], dtype=np.float32)
        samples.append(
            WindowSample(features=feats, label=ev.condition, subject_id=subject_id, run_id=run_id)
        )
    if dropped:
        log.warning("dropped %d of %d events with out-of-run windows", dropped, len(events.events))
    return samples, dropped
