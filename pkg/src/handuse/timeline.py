"""Per-hand interaction timelines and the hand-use metrics derived from them."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import DataError, Laterality, PipelineConfig

MISSING = -1
NO_INTERACTION = 0
INTERACTION = 1


@dataclass(frozen=True)
class Timeline:
    laterality: Laterality
    fps: float
    states: np.ndarray  # int8: 1, 0 or MISSING

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int8).copy()
        if np.any((s != MISSING) & (s != 0) & (s != 1)):
            raise DataError("timeline states must be 0, 1 or missing")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def has_missing(self) -> bool:
        return bool(np.any(self.states == MISSING))

    def with_states(self, states) -> "Timeline":
        return Timeline(self.laterality, self.fps, states)


@dataclass(frozen=True)
class UseMetrics:
    interaction_fraction: float
    mean_duration_s: float
    interactions_per_hour: float
    interaction_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def runs(binary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start indices and lengths of the runs of ones."""
    b = np.asarray(binary, dtype=np.int8)
    d = np.diff(np.concatenate([[0], (b == 1).astype(np.int8), [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return starts, ends - starts


def prolong(tl: Timeline, cfg: PipelineConfig | None = None) -> Timeline:
    """Carry an interaction across up to ``prolong_frames`` missing frames; other gaps become 0."""
    cfg = cfg or PipelineConfig()
    s = tl.states.astype(np.int8).copy()
    missing = s == MISSING
    if not missing.any():
        return tl
    d = np.diff(np.concatenate([[0], missing.astype(np.int8), [0]]))
    for start, end in zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)):
        fill_to = start
        if start > 0 and s[start - 1] == INTERACTION:
            fill_to = min(end, start + cfg.prolong_frames)
        s[start:fill_to] = INTERACTION
        s[fill_to:end] = NO_INTERACTION
    return tl.with_states(s)


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centred equal-weight average over [t - window//2, t + window - window//2 - 1].

    The signal is mirrored (without repeating the edge sample) at both ends so
    every output averages exactly ``window`` samples.
    """
    x = np.asarray(values, dtype=np.int64)
    n = len(x)
    if n == 0:
        return np.zeros(0)
    before = window // 2
    after = window - before - 1
    if n == 1:
        padded = np.full(window, x[0])
    else:
        padded = np.pad(x, (before, after), mode="reflect")
    c = np.concatenate([[0], np.cumsum(padded)])
    # integer window sums keep symmetric inputs exactly symmetric
    return (c[window:] - c[:-window])[:n] / window


def smooth_binarize(tl: Timeline, cfg: PipelineConfig | None = None) -> Timeline:
    cfg = cfg or PipelineConfig()
    if tl.has_missing:
        raise DataError("smooth_binarize needs a timeline without missing frames; prolong it first")
    if len(tl) == 0:
        return tl
    avg = moving_average(tl.states, cfg.smooth_frames)
    lo, hi = avg.min(), avg.max()
    if hi - lo >= 1e-9:
        avg = (avg - lo) / (hi - lo)
    return tl.with_states((avg > cfg.binarize_threshold).astype(np.int8))


def metrics(tl: Timeline, cfg: PipelineConfig | None = None) -> UseMetrics:
    fps = tl.fps if tl.fps else (cfg or PipelineConfig()).fps
    n = len(tl)
    if n == 0:
        raise DataError("cannot compute metrics of an empty timeline")
    if fps <= 0:
        raise DataError("fps must be positive")
    if tl.has_missing:
        raise DataError("metrics need a binary timeline")
    _, lengths = runs(tl.states)
    count = len(lengths)
    ones = int(lengths.sum())
    hours = n / fps / 3600.0
    return UseMetrics(
        interaction_fraction=ones / n,
        mean_duration_s=float(lengths.mean() / fps) if count else 0.0,
        interactions_per_hour=count / hours,
        interaction_count=count,
    )


def finalize(tl: Timeline, cfg: PipelineConfig | None = None) -> Timeline:
    """prolong -> smooth -> binarize."""
    return smooth_binarize(prolong(tl, cfg), cfg)


@dataclass(frozen=True)
class Decision:
    frame_index: int
    laterality: Laterality
    interaction: bool
    confidence: float = 1.0


def assign_detections(decisions: Iterable[Decision], n_frames: int, fps: float = 30.0
                      ) -> dict[Laterality, Timeline]:
    """Per laterality, the decision of the most confident observation in each frame."""
    states = {lat: np.full(n_frames, MISSING, dtype=np.int8) for lat in Laterality}
    best = {lat: np.full(n_frames, -np.inf) for lat in Laterality}
    for d in decisions:
        if not 0 <= d.frame_index < n_frames:
            raise DataError(f"decision for frame {d.frame_index} outside 0..{n_frames - 1}")
        lat = Laterality(d.laterality)
        # first one wins on equal confidence
        if d.confidence > best[lat][d.frame_index]:
            best[lat][d.frame_index] = d.confidence
            states[lat][d.frame_index] = int(bool(d.interaction))
    return {lat: Timeline(lat, fps, states[lat]) for lat in Laterality}


def write_timelines_csv(path: str | Path, timelines: Mapping[Laterality, Timeline], fps: float) -> None:
    n = len(next(iter(timelines.values())))
    cols = [Laterality.LEFT, Laterality.RIGHT, Laterality.OTHER]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "time_s"] + [c.value for c in cols])
        for i in range(n):
            row = [i, f"{i / fps:.6f}"]
            for c in cols:
                v = int(timelines[c].states[i]) if c in timelines else MISSING
                row.append("M" if v == MISSING else v)
            w.writerow(row)


def read_timelines_csv(path: str | Path, fps: float) -> dict[Laterality, Timeline]:
    cols: dict[Laterality, list[int]] = {lat: [] for lat in Laterality}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for line_no, row in enumerate(reader, start=2):
            for lat in Laterality:
                v = (row.get(lat.value) or "M").strip()
                if v not in ("0", "1", "M"):
                    raise DataError(f"{path}:{line_no}: bad {lat.value} value {v!r}")
                cols[lat].append(MISSING if v == "M" else int(v))
    return {lat: Timeline(lat, fps, np.array(v, dtype=np.int8)) for lat, v in cols.items()}


def write_metrics_json(path: str | Path, per_hand: Mapping[Laterality, UseMetrics], extra: dict | None = None) -> None:
    doc = {lat.value: m.to_dict() for lat, m in per_hand.items()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
