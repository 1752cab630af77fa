"""Domain types, pipeline configuration and seeding helpers shared by every stage.

Angle convention (used by the Haar feature, flow directions and HOG):
0 deg points toward the LEFT image edge and angles increase through the TOP,
so 90 = up, 180 = right and 270 = down.  A displacement ``(dx, dy)`` in image
coordinates (y grows downward) therefore has angle ``atan2(-dy, -dx)``.
This convention is inferred from the quadrant labels used for laterality
(180-270 is bottom-right, 270-360 is bottom-left) and is not stated anywhere
explicitly, so treat it as a documented assumption.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np


class HanduseError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(HanduseError):
    pass


class ConfigValidationError(ConfigError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class ModelError(HanduseError):
    """Missing, untrained or malformed model."""


class DataError(HanduseError):
    """Malformed input data (frames, detections, labels)."""


class MissingInputError(HanduseError):
    """A required input file, directory or model does not exist."""


def angle_of(dx, dy):
    """Angle in degrees [0, 360) of an image-space displacement; 0 for a zero vector."""
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    a = np.mod(np.degrees(np.arctan2(-dy, -dx)), 360.0)
    # mod can round a tiny negative angle up to exactly 360
    return np.where((dx == 0) & (dy == 0) | (a >= 360.0), 0.0, a)


def direction_of(angle_deg):
    """Unit image-space displacement ``(dx, dy)`` for an angle in degrees."""
    a = np.radians(angle_deg)
    return -np.cos(a), -np.sin(a)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FrameImage:
    index: int
    pixels: np.ndarray  # (height, width, 3) uint8
    fps: float = 30.0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DataError(f"frame {self.index}: expected HxWx3 pixels, got {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise DataError(f"frame {self.index}: empty frame")
        if self.index < 0:
            raise DataError("frame index must be non-negative")
        object.__setattr__(self, "pixels", _readonly(px.astype(np.uint8, copy=False)))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def timestamp_s(self) -> float:
        return self.index / self.fps


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise DataError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def perimeter(self) -> int:
        return 2 * (self.w + self.h)

    @property
    def centroid(self) -> tuple[float, float]:
        # pixel-centre coordinates
        return self.x + (self.w - 1) / 2.0, self.y + (self.h - 1) / 2.0

    def within(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height

    def clamp(self, width: int, height: int) -> "BoundingBox":
        """Shift the box inside a ``width`` x ``height`` frame, shrinking only if it cannot fit."""
        w, h = min(self.w, width), min(self.h, height)
        x = min(max(self.x, 0), width - w)
        y = min(max(self.y, 0), height - h)
        return BoundingBox(int(x), int(y), int(w), int(h))

    def intersect(self, width: int, height: int) -> "BoundingBox | None":
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1, y1 = min(self.x + self.w, width), min(self.y + self.h, height)
        if x1 <= x0 or y1 <= y0:
            return None
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)

    def iou(self, other: "BoundingBox") -> float:
        ix = max(0, min(self.x + self.w, other.x + other.w) - max(self.x, other.x))
        iy = max(0, min(self.y + self.h, other.y + other.h) - max(self.y, other.y))
        inter = ix * iy
        return inter / float(self.area + other.area - inter)


class Laterality(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    OTHER = "other"


@dataclass(frozen=True)
class HandObservation:
    frame_index: int
    box: BoundingBox
    recentred_box: BoundingBox
    laterality: Laterality
    mask: np.ndarray  # bool, shape (recentred_box.h, recentred_box.w)
    detector_confidence: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != (self.recentred_box.h, self.recentred_box.w):
            raise DataError("mask shape must equal the re-centred box size")
        if not m.any():
            raise DataError("hand mask is empty")
        object.__setattr__(self, "mask", _readonly(m))


@dataclass(frozen=True)
class PipelineConfig:
    fps: float = 30.0
    skin_threshold: float = 0.75
    edge_threshold: float = 0.05
    contour_area_min_frac: float = 0.02
    contour_area_max_frac: float = 0.75
    contour_arc_min_frac: float = 0.90
    contour_arc_max_frac: float = 1.10
    haar_step_deg: int = 1
    haar_bin_deg: int = 5
    flow_bins: int = 15
    hog_raw_dim: int = 960
    pca_dim: int = 60
    colour_bins_h: int = 16
    colour_bins_s: int = 16
    forest_trees: int = 150
    prolong_frames: int = 90
    smooth_frames: int = 120
    binarize_threshold: float = 0.5
    rng_seed: int = 0
    # knobs the reference pipeline leaves open
    morph_radius: int = 1
    morph_iterations: int = 2
    overlap_dilate_radius: int = 2
    haar_min_strip_px: int = 8
    flow_mag_cap_frac: float = 0.05
    hog_height: int = 48
    hog_width: int = 128
    hog_cell: int = 8
    hog_orientations: int = 10
    forest_max_depth: int | None = None
    forest_min_samples_split: int = 2
    forest_max_features: str | int = "sqrt"
    propose_skin_threshold: float = 0.5
    propose_min_area_frac: float = 0.005

    def __post_init__(self):
        for name in ("skin_threshold", "edge_threshold", "contour_area_min_frac",
                     "contour_area_max_frac", "binarize_threshold", "flow_mag_cap_frac",
                     "propose_skin_threshold", "propose_min_area_frac"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not 0.0 < v <= 1.0:
                raise ConfigValidationError(name, f"must be in (0, 1], got {v!r}")
        if not 0 < self.contour_arc_min_frac < self.contour_arc_max_frac:
            raise ConfigValidationError("contour_arc_min_frac", "arc fractions must satisfy 0 < min < max")
        if self.contour_area_min_frac >= self.contour_area_max_frac:
            raise ConfigValidationError("contour_area_min_frac", "must be below contour_area_max_frac")
        if not self.fps > 0:
            raise ConfigValidationError("fps", "must be positive")
        for name in ("haar_step_deg", "haar_bin_deg", "flow_bins", "hog_raw_dim", "pca_dim",
                     "colour_bins_h", "colour_bins_s", "forest_trees", "smooth_frames",
                     "morph_radius", "morph_iterations", "overlap_dilate_radius",
                     "haar_min_strip_px", "hog_height", "hog_width", "hog_cell",
                     "hog_orientations", "forest_min_samples_split"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ConfigValidationError(name, f"must be a positive integer, got {v!r}")
        if not isinstance(self.prolong_frames, int) or self.prolong_frames < 0:
            raise ConfigValidationError("prolong_frames", "must be a non-negative integer")
        if not isinstance(self.rng_seed, int) or isinstance(self.rng_seed, bool):
            raise ConfigValidationError("rng_seed", "must be an integer")
        if 360 % self.haar_bin_deg:
            raise ConfigValidationError("haar_bin_deg", "must divide 360")
        if self.haar_bin_deg % self.haar_step_deg:
            raise ConfigValidationError("haar_step_deg", "must divide haar_bin_deg")
        if self.forest_min_samples_split < 2:
            raise ConfigValidationError("forest_min_samples_split", "must be at least 2")
        if self.forest_max_depth is not None and (not isinstance(self.forest_max_depth, int)
                                                  or self.forest_max_depth <= 0):
            raise ConfigValidationError("forest_max_depth", "must be null or a positive integer")
        mf = self.forest_max_features
        if not (mf in ("sqrt", "log2", "all") or (isinstance(mf, int) and mf > 0)):
            raise ConfigValidationError("forest_max_features", "must be 'sqrt', 'log2', 'all' or a positive integer")
        if self.hog_height % self.hog_cell or self.hog_width % self.hog_cell:
            raise ConfigValidationError("hog_cell", "must divide hog_height and hog_width")
        cells = (self.hog_height // self.hog_cell) * (self.hog_width // self.hog_cell)
        if cells * self.hog_orientations != self.hog_raw_dim:
            raise ConfigValidationError(
                "hog_raw_dim", f"HOG layout yields {cells * self.hog_orientations} values, not {self.hog_raw_dim}")
        if self.pca_dim > self.hog_raw_dim:
            raise ConfigValidationError("pca_dim", "cannot exceed hog_raw_dim")

    @property
    def haar_bins(self) -> int:
        return 360 // self.haar_bin_deg

    @property
    def feature_dim(self) -> int:
        return 4 * self.flow_bins + self.pca_dim + 2

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigValidationError(unknown[0], "unknown configuration key")
        values = dict(data)
        # JSON has no int/float distinction for whole numbers
        if "fps" in values and isinstance(values["fps"], int):
            values["fps"] = float(values["fps"])
        for name in ("skin_threshold", "edge_threshold", "binarize_threshold"):
            if isinstance(values.get(name), int) and not isinstance(values.get(name), bool):
                values[name] = float(values[name])
        return cls(**values)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"config file not found: {p}")
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    if not text.strip():
        return PipelineConfig()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from exc
    return PipelineConfig.from_dict(data)


def dump_config(cfg: PipelineConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for a (seed, stream...) key; stable across worker layouts."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *(int(s) for s in stream)])


def frame_diagonal(width: int, height: int) -> float:
    return math.hypot(width, height)
