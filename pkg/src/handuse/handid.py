"""Hand verification and laterality from the rotating three-strip feature.

For every direction around the box centroid a centre strip runs from the
centroid to the image border, flanked by two parallel strips of the same
width.  A bare forearm is uniform, so its strip has a lower coefficient of
variation than its neighbours; the per-angle score is the mean of
(side CoV - centre CoV) and peaks along the arm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .classify import ForestModel, fit_arrays
from .core import BoundingBox, DataError, Laterality, ModelError, PipelineConfig, direction_of

_COV_EPS = 1e-6
_MAX_LANES = 2  # lanes per strip; more lanes cost time without changing the peak


@dataclass(frozen=True)
class CandidateDetection:
    frame_index: int
    box: BoundingBox
    confidence: float = 1.0


def _ray_length(cx: float, cy: float, dx: float, dy: float, w: int, h: int) -> float:
    """Distance from (cx, cy) along (dx, dy) to the last pixel centre inside the frame."""
    ts = []
    for c, d, hi in ((cx, dx, w - 1), (cy, dy, h - 1)):
        if d > 1e-12:
            ts.append((hi - c) / d)
        elif d < -1e-12:
            ts.append(-c / d)
    return max(0.0, min(ts)) if ts else 0.0


def angle_scores(gray: np.ndarray, box: BoundingBox, cfg: PipelineConfig | None = None) -> np.ndarray:
    """Score for each angle 0, step, 2*step, ... < 360 (degrees)."""
    cfg = cfg or PipelineConfig()
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape
    if not box.within(w, h):
        raise DataError("box must lie within the frame")
    cx, cy = box.centroid
    width = max(float(cfg.haar_min_strip_px), box.w / 2.0)
    n_lanes = min(_MAX_LANES, max(1, int(round(width))))
    lanes = (np.arange(n_lanes) - (n_lanes - 1) / 2.0) * (width / n_lanes)
    offsets = np.array([-width, 0.0, width])  # side, centre, side
    across = (offsets[:, None] + lanes[None, :]).ravel()  # (3 * n_lanes,)
    strip_of = np.repeat(np.arange(3), n_lanes)

    angles = np.arange(0, 360, cfg.haar_step_deg, dtype=np.float64)
    dirs = np.stack(direction_of(angles), axis=1)
    n_groups = 3 * len(angles)
    lengths = np.array([_ray_length(cx, cy, dx, dy, w, h) for dx, dy in dirs])
    u = np.arange(int(math.floor(lengths.max())) + 1, dtype=np.float64)
    # (angle, u, strip-lane)
    dx = dirs[:, 0][:, None, None]
    dy = dirs[:, 1][:, None, None]
    xs = cx + u[None, :, None] * dx - across[None, None, :] * dy
    ys = cy + u[None, :, None] * dy + across[None, None, :] * dx
    keep = (u[None, :, None] <= lengths[:, None, None]) & (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    grp = (3 * np.arange(len(angles))[:, None, None] + strip_of[None, None, :])
    grp = np.broadcast_to(grp, keep.shape)[keep]
    xs = xs[keep]
    ys = ys[keep]
    vals = ndimage.map_coordinates(gray, [ys, xs], order=1, mode="nearest")

    n = np.bincount(grp, minlength=n_groups).astype(np.float64)
    safe_n = np.maximum(n, 1.0)
    mean = np.bincount(grp, weights=vals, minlength=n_groups) / safe_n
    dev = vals - mean[grp]
    std = np.sqrt(np.bincount(grp, weights=dev * dev, minlength=n_groups) / safe_n)
    # rounding leaves ~1e-17 spread on constant strips; call that exactly uniform
    std = np.where(std <= 1e-12 * np.abs(mean), 0.0, std)
    ok = (n > 0) & (mean >= _COV_EPS)
    cov = np.where(ok, std / np.where(ok, mean, 1.0), 0.0).reshape(-1, 3)
    return 0.5 * ((cov[:, 0] - cov[:, 1]) + (cov[:, 2] - cov[:, 1]))


def haar_feature(gray: np.ndarray, box: BoundingBox, cfg: PipelineConfig | None = None) -> np.ndarray:
    """72-bin rotating-strip feature; bin k sums the scores of angles in [5k, 5k+5)."""
    cfg = cfg or PipelineConfig()
    s = angle_scores(gray, box, cfg)
    per_bin = cfg.haar_bin_deg // cfg.haar_step_deg
    return s.reshape(cfg.haar_bins, per_bin).sum(axis=1)


def laterality(feature: np.ndarray) -> Laterality:
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (72,):
        raise DataError(f"expected 72 values, got {f.shape}")
    other = f[0:36].sum()    # 0-180: top half
    right = f[36:54].sum()   # 180-270: bottom right
    left = f[54:72].sum()    # 270-360: bottom left
    # ties: Left > Right > Other
    best = max((left, 2), (right, 1), (other, 0))
    return {2: Laterality.LEFT, 1: Laterality.RIGHT, 0: Laterality.OTHER}[best[1]]


def train_verifier(features, is_hand, cfg: PipelineConfig | None = None, seed: int | None = None) -> ForestModel:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 72:
        raise DataError("verifier features must be rows of 72 values")
    return fit_arrays(X, np.asarray(is_hand, dtype=np.int64), cfg, seed, class_names=("not-hand", "hand"))


def verify(feature: np.ndarray, model: ForestModel | None) -> bool:
    if model is None or model.n_trees == 0:
        raise ModelError("verifier is not trained")
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (model.feature_dim,):
        raise DataError(f"expected {model.feature_dim} values, got {f.shape}")
    return bool(verify_many(f[None, :], model)[0])


def verify_many(features: np.ndarray, model: ForestModel | None) -> np.ndarray:
    """Boolean hand/not-hand decision for each row of 72 values."""
    if model is None or model.n_trees == 0:
        raise ModelError("verifier is not trained")
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.feature_dim:
        raise DataError(f"expected rows of {model.feature_dim} values, got shape {X.shape}")
    label, _ = model.predict(X)
    return label.astype(bool)
