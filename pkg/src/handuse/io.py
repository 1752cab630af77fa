"""Reading and writing recordings: frame folders, detection and label sidecars, manifests.

Also holds the skin-blob box proposer used when no external detector output
is available.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .core import (BoundingBox, DataError, FrameImage, Laterality, MissingInputError, PipelineConfig)
from .imaging import SKIN_PEAK_FLOOR, SkinModel, morph_close

log = logging.getLogger(__name__)

_FRAME_NAME = re.compile(r"^(\d+)\.(png|bmp)$", re.IGNORECASE)


@dataclass(frozen=True)
class DetectionRecord:
    frame_index: int
    x: int
    y: int
    w: int
    h: int
    confidence: float
    is_hand: bool | None = None  # only set in verifier training sidecars

    @property
    def box(self) -> BoundingBox:
        return BoundingBox(self.x, self.y, self.w, self.h)

    def to_json(self) -> dict:
        d = {"frame": self.frame_index, "x": self.x, "y": self.y, "w": self.w, "h": self.h,
             "confidence": self.confidence}
        if self.is_hand is not None:
            d["is_hand"] = self.is_hand
        return d


@dataclass(frozen=True)
class LabelRecord:
    frame_index: int
    laterality: Laterality
    interaction: bool


# -- frames ------------------------------------------------------------------

def frame_files(path: str | Path) -> list[Path]:
    """Numerically named PNG/BMP files in index order, checking for gaps."""
    d = Path(path)
    if not d.is_dir():
        raise MissingInputError(f"frame directory not found: {d}")
    numbered = []
    for p in d.iterdir():
        m = _FRAME_NAME.match(p.name)
        if m:
            numbered.append((int(m.group(1)), p))
    numbered.sort()
    if not numbered:
        raise DataError(f"no numbered PNG/BMP frames in {d}")
    first = numbered[0][0]
    for expected, (num, p) in enumerate(numbered, start=first):
        if num != expected:
            if num == expected - 1:
                raise DataError(f"two files for frame number {num}: {p.name}")
            raise DataError(f"frame number {expected} missing (next file is {p.name})")
    return [p for _, p in numbered]


def read_frame(path: Path, index: int, fps: float = 30.0) -> FrameImage:
    try:
        with Image.open(path) as im:
            px = np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read frame {path}: {exc}") from exc
    return FrameImage(index, px, fps)


def ingest_frames(path: str | Path, fps: float = 30.0) -> list[FrameImage]:
    """All frames of a folder, indexed from 0 in numeric filename order."""
    frames = []
    size = None
    for i, p in enumerate(frame_files(path)):
        f = read_frame(p, i, fps)
        if size is None:
            size = (f.width, f.height)
        elif (f.width, f.height) != size:
            raise DataError(f"{p.name} is {f.width}x{f.height}, expected {size[0]}x{size[1]} like the first frame")
        frames.append(f)
    return frames


# -- sidecars ----------------------------------------------------------------

def _jsonl_objects(path: str | Path):
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{p}:{line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{p}:{line_no}: expected a JSON object")
            yield line_no, obj


def _int_field(obj: dict, key: str, where: str) -> int:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise DataError(f"{where}: field {key!r} must be an integer, got {v!r}")
    return int(v)


def ingest_detections(path: str | Path, frame_size: tuple[int, int] | None = None,
                      n_frames: int | None = None) -> list[DetectionRecord]:
    """Validated detections sorted by frame (stable within a frame).

    ``frame_size`` is (width, height); boxes not fully inside it are dropped
    with a warning.
    """
    out = []
    for line_no, obj in _jsonl_objects(path):
        where = f"{path}:{line_no}"
        frame, x, y, w, h = (_int_field(obj, k, where) for k in ("frame", "x", "y", "w", "h"))
        conf = obj.get("confidence", 1.0)
        if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            raise DataError(f"{where}: confidence must be a number in [0, 1], got {conf!r}")
        if frame < 0 or (n_frames is not None and frame >= n_frames):
            raise DataError(f"{where}: frame {frame} outside the sequence")
        if w <= 0 or h <= 0:
            raise DataError(f"{where}: box size must be positive, got w={w} h={h}")
        is_hand = obj.get("is_hand")
        if is_hand is not None and not isinstance(is_hand, bool):
            raise DataError(f"{where}: is_hand must be true or false")
        rec = DetectionRecord(frame, x, y, w, h, float(conf), is_hand)
        if frame_size is not None and not rec.box.within(*frame_size):
            log.warning("%s: box %s lies outside the %dx%d frame; dropped", where, rec.box, *frame_size)
            continue
        out.append(rec)
    out.sort(key=lambda r: r.frame_index)
    return out


def write_detections(records, path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


_LABEL_VALUES = {"interaction": True, "no_interaction": False}


def ingest_labels(path: str | Path) -> dict[tuple[int, Laterality], bool]:
    """``{(frame, laterality): interaction}``; a repeated (frame, laterality) is an error."""
    out: dict[tuple[int, Laterality], bool] = {}
    for line_no, obj in _jsonl_objects(path):
        where = f"{path}:{line_no}"
        frame = _int_field(obj, "frame", where)
        try:
            lat = Laterality(obj.get("laterality"))
        except ValueError:
            raise DataError(f"{where}: laterality must be left, right or other") from None
        label = obj.get("label")
        if label not in _LABEL_VALUES:
            raise DataError(f"{where}: label must be 'interaction' or 'no_interaction'")
        if (frame, lat) in out:
            raise DataError(f"{where}: second label for frame {frame}, {lat.value} hand")
        out[(frame, lat)] = _LABEL_VALUES[label]
    return out


def label_states(labels: dict[tuple[int, Laterality], bool], laterality: Laterality, n_frames: int) -> np.ndarray:
    """Per-frame 1/0 for one hand, MISSING (-1) where unlabelled."""
    s = np.full(n_frames, -1, dtype=np.int8)
    for (f, lat), v in labels.items():
        if lat == laterality and 0 <= f < n_frames:
            s[f] = int(v)
    return s


# -- manifest ----------------------------------------------------------------

@dataclass(frozen=True)
class SubjectEntry:
    subject_id: str
    frames: Path
    detections: Path
    labels: Path | None


@dataclass(frozen=True)
class Manifest:
    path: Path
    fps: float
    subjects: tuple[SubjectEntry, ...]
    verifier_frames: Path | None
    verifier_detections: Path | None

    def subject(self, sid: str) -> SubjectEntry:
        for s in self.subjects:
            if s.subject_id == sid:
                return s
        raise DataError(f"subject {sid!r} not in {self.path}")


def load_manifest(path: str | Path) -> Manifest:
    """JSON manifest; relative paths resolve against its folder."""
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"manifest not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    base = p.parent
    subjects = []
    seen = set()
    for i, s in enumerate(doc.get("subjects", [])):
        try:
            sid = str(s["id"])
            entry = SubjectEntry(sid, base / s["frames"], base / s["detections"],
                                 base / s["labels"] if s.get("labels") else None)
        except (KeyError, TypeError):
            raise DataError(f"{p}: subject entry {i} needs id, frames and detections") from None
        if sid in seen:
            raise DataError(f"{p}: subject {sid!r} listed twice")
        seen.add(sid)
        subjects.append(entry)
    ver = doc.get("verifier") or {}
    return Manifest(p, float(doc.get("fps", 30.0)), tuple(subjects),
                    base / ver["frames"] if "frames" in ver else None,
                    base / ver["detections"] if "detections" in ver else None)


# -- box proposer ------------------------------------------------------------

def propose_boxes(frame: FrameImage, skin: SkinModel, cfg: PipelineConfig | None = None) -> list[DetectionRecord]:
    """Bounding boxes of large skin blobs; confidence is the mean skin probability inside the blob."""
    cfg = cfg or PipelineConfig()
    prob = skin.probability(frame.pixels)
    top = float(prob.max())
    if top <= 0 or top < SKIN_PEAK_FLOOR:
        return []
    mask = morph_close(prob >= cfg.propose_skin_threshold * top, cfg.morph_radius, cfg.morph_iterations)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    min_area = cfg.propose_min_area_frac * frame.width * frame.height
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        comp = labels[sl] == i
        area = int(comp.sum())
        if area < min_area:
            continue
        ys, xs = sl
        conf = float(prob[sl][comp].mean())
        out.append(DetectionRecord(frame.index, xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start,
                                   round(min(1.0, conf), 6)))
    return out
