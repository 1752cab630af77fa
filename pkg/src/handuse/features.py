"""Interaction features for one hand: motion, shape and colour cues.

The frame is partitioned into three regions: the hand mask, the rest of the
re-centred box (neighbourhood) and everything outside the box (background).
The final 122-value vector is

    flow(60)   = [hand - box, background - box] of (15 magnitude + 15 direction) histograms
    hog(60)    = PCA projection of a 960-value HOG descriptor of the box crop
    colour(2)  = Bhattacharyya distances (hand vs box, box vs background) of H-S histograms
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BoundingBox, DataError, FrameImage, ModelError, PipelineConfig, angle_of, frame_diagonal
from .imaging import gradients, resize_bilinear, rgb_to_hsv, to_gray

FLOW_DIM = 60
HOG_PCA_DIM = 60
COLOUR_DIM = 2
FEATURE_DIM = FLOW_DIM + HOG_PCA_DIM + COLOUR_DIM


@dataclass(frozen=True)
class RegionTriple:
    hand: np.ndarray
    neighbourhood: np.ndarray
    background: np.ndarray

    @classmethod
    def from_box(cls, height: int, width: int, box: BoundingBox, hand_mask: np.ndarray) -> "RegionTriple":
        """``hand_mask`` is box-local, as stored on a HandObservation."""
        hand = np.zeros((height, width), dtype=bool)
        in_box = np.zeros((height, width), dtype=bool)
        ys, xs = box.slices()
        in_box[ys, xs] = True
        hand[ys, xs] = np.asarray(hand_mask, dtype=bool)
        return cls(hand, in_box & ~hand, ~in_box)

    def regions(self):
        return self.hand, self.neighbourhood, self.background


# -- motion ------------------------------------------------------------------

def _flow_hist(mag: np.ndarray, ang: np.ndarray, region: np.ndarray, cap: float, bins: int):
    count = int(region.sum())
    if count == 0:
        return np.zeros(bins), np.zeros(bins), False
    m = mag[region]
    a = ang[region]
    mi = np.minimum((m / (cap / bins)).astype(np.int64), bins - 1)
    ai = np.minimum((a / (360.0 / bins)).astype(np.int64), bins - 1)
    return (np.bincount(mi, minlength=bins) / count,
            np.bincount(ai, minlength=bins) / count, True)


def flow_histograms(flow: np.ndarray, regions: RegionTriple, cfg: PipelineConfig | None = None):
    """(magnitude, direction) histogram pairs for hand, neighbourhood and background.

    Returns ``(pairs, valid)``; an empty region yields zero histograms and valid=False.
    """
    cfg = cfg or PipelineConfig()
    flow = np.asarray(flow, dtype=np.float64)
    h, w = flow.shape[:2]
    if regions.hand.shape != (h, w):
        raise DataError("flow field and regions differ in size")
    dx, dy = flow[..., 0], flow[..., 1]
    mag = np.hypot(dx, dy)
    ang = angle_of(dx, dy)
    cap = cfg.flow_mag_cap_frac * frame_diagonal(w, h)
    pairs, valid = [], True
    for region in regions.regions():
        hm, hd, ok = _flow_hist(mag, ang, region, cap, cfg.flow_bins)
        pairs.append((hm, hd))
        valid &= ok
    return pairs, valid


def flow_difference(pairs) -> np.ndarray:
    (hm, hd), (nm, nd), (bm, bd) = pairs
    return np.concatenate([hm - nm, hd - nd, bm - nm, bd - nd])


# -- shape -------------------------------------------------------------------

def hog_raw(frame, box: BoundingBox, cfg: PipelineConfig | None = None) -> np.ndarray | None:
    """960-value HOG of the box crop resized to 48x128; None for a degenerate box."""
    cfg = cfg or PipelineConfig()
    px = frame.pixels if isinstance(frame, FrameImage) else np.asarray(frame)
    gray = to_gray(px) if px.ndim == 3 else np.asarray(px, dtype=np.float64)
    clipped = box.intersect(gray.shape[1], gray.shape[0])
    if clipped is None or clipped.w < 8 or clipped.h < 8:
        return None
    ys, xs = clipped.slices()
    crop = resize_bilinear(gray[ys, xs], cfg.hog_height, cfg.hog_width)
    return hog_descriptor(crop, cfg)


def hog_descriptor(img: np.ndarray, cfg: PipelineConfig | None = None) -> np.ndarray:
    cfg = cfg or PipelineConfig()
    gx, gy = gradients(img)
    mag = np.hypot(gx, gy)
    mag[mag < 1e-9] = 0.0  # resampling residue on flat crops
    n_bins = cfg.hog_orientations
    orient = np.mod(angle_of(gx, gy), 180.0)
    b = np.minimum((orient / (180.0 / n_bins)).astype(np.int64), n_bins - 1)
    c = cfg.hog_cell
    h, w = img.shape
    ncy, ncx = h // c, w // c
    cell = (np.arange(h)[:, None] // c) * ncx + (np.arange(w)[None, :] // c)
    hist = np.bincount((cell * n_bins + b).ravel(), weights=mag.ravel(),
                       minlength=ncy * ncx * n_bins).reshape(ncy * ncx, n_bins)
    norm = np.sqrt((hist * hist).sum(axis=1, keepdims=True) + 1e-12)  # eps = 1e-6
    return (hist / norm).ravel()


# -- PCA ---------------------------------------------------------------------

PCA_MAGIC = b"HPCA"
PCA_VERSION = 1


@dataclass(frozen=True)
class PcaModel:
    """Layout on disk (little-endian): magic ``HPCA``, u32 version, u32 raw_dim,
    u32 dim, f64 mean[raw_dim], f64 components[dim * raw_dim] (row-major),
    f64 explained_variance[dim]."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def raw_dim(self) -> int:
        return self.components.shape[1]

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(PCA_MAGIC)
        buf.write(struct.pack("<III", PCA_VERSION, self.raw_dim, self.dim))
        for arr in (self.mean, self.components, self.explained_variance):
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PcaModel":
        if raw[:4] != PCA_MAGIC:
            raise ModelError("not a PCA model file")
        version, raw_dim, dim = struct.unpack_from("<III", raw, 4)
        if version != PCA_VERSION:
            raise ModelError(f"unsupported PCA model version {version}")
        vals = np.frombuffer(raw, dtype="<f8", offset=16)
        if vals.size != raw_dim + dim * raw_dim + dim:
            raise ModelError("truncated PCA model file")
        mean = vals[:raw_dim].copy()
        comps = vals[raw_dim:raw_dim + dim * raw_dim].reshape(dim, raw_dim).copy()
        return cls(mean, comps, vals[raw_dim + dim * raw_dim:].copy())

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "PcaModel":
        p = Path(path)
        if not p.exists():
            raise ModelError(f"model file not found: {p}")
        return cls.from_bytes(p.read_bytes())

    def to_csv(self, path: str | Path) -> None:
        rows = ["row," + ",".join(f"d{i}" for i in range(self.raw_dim))]
        rows.append("mean," + ",".join(repr(float(v)) for v in self.mean))
        for k, comp in enumerate(self.components):
            rows.append(f"pc{k}," + ",".join(repr(float(v)) for v in comp))
        Path(path).write_text("\n".join(rows) + "\n")


def pca_fit(samples, dim: int = 60, seed: int | None = None) -> PcaModel:
    """Top-``dim`` principal axes of the rows of ``samples``.

    Each axis is signed so that its largest-magnitude entry is positive.
    ``seed`` is accepted for interface symmetry; the decomposition is deterministic.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("samples must be a 2-D matrix")
    if len(X) < dim:
        raise DataError(f"PCA to {dim} dimensions needs at least {dim} samples, got {len(X)}")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:dim].copy()
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(dim), idx])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    var = (s[:dim] ** 2) / len(X)
    return PcaModel(mean, comps, var)


def pca_project(model: PcaModel, raw) -> np.ndarray:
    if model is None:
        raise ModelError("PCA model is not fitted")
    v = np.asarray(raw, dtype=np.float64)
    if v.shape[-1] != model.raw_dim:
        raise DataError(f"expected {model.raw_dim} values, got {v.shape[-1]}")
    return (v - model.mean) @ model.components.T


# -- colour ------------------------------------------------------------------

def hs_histogram(hsv: np.ndarray, region: np.ndarray, cfg: PipelineConfig) -> np.ndarray | None:
    n = int(region.sum())
    if n == 0:
        return None
    hb, sb = cfg.colour_bins_h, cfg.colour_bins_s
    hue = hsv[..., 0][region]
    sat = hsv[..., 1][region]
    hi = np.minimum((hue / (360.0 / hb)).astype(np.int64), hb - 1)
    si = np.minimum((sat * sb).astype(np.int64), sb - 1)
    return np.bincount(hi * sb + si, minlength=hb * sb) / n


def bhattacharyya_distance(p: np.ndarray, q: np.ndarray) -> float:
    """sqrt(1 - sum sqrt(p q)) for L1-normalised histograms.

    Evaluated as sqrt(0.5 * sum (sqrt p - sqrt q)^2), which is the same quantity
    for normalised inputs but exactly zero for identical ones.
    """
    d2 = 0.5 * np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)
    return float(np.sqrt(min(1.0, max(0.0, d2))))


def colour_distances(hsv: np.ndarray, regions: RegionTriple, cfg: PipelineConfig | None = None):
    """Returns ``(d_hand_box, d_box_background, valid)``."""
    cfg = cfg or PipelineConfig()
    hand, box, bg = (hs_histogram(hsv, r, cfg) for r in regions.regions())
    d1 = 1.0 if hand is None or box is None else bhattacharyya_distance(hand, box)
    d2 = 1.0 if box is None or bg is None else bhattacharyya_distance(box, bg)
    return d1, d2, hand is not None and box is not None and bg is not None


# -- assembly ----------------------------------------------------------------

@dataclass(frozen=True)
class InteractionFeature:
    flow_diff: np.ndarray
    hog_pca: np.ndarray
    colour_dist: np.ndarray
    valid: bool = True

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.flow_diff, self.hog_pca, self.colour_dist])


def assemble(flow_diff, hog_pca, colour_dist, valid: bool | tuple = True) -> InteractionFeature:
    """Concatenate the three cue groups; ``valid`` may be one flag or one per group."""
    f = np.asarray(flow_diff, dtype=np.float64)
    h = np.asarray(hog_pca, dtype=np.float64)
    c = np.asarray(colour_dist, dtype=np.float64)
    if f.shape != (FLOW_DIM,) or h.shape != (HOG_PCA_DIM,) or c.shape != (COLOUR_DIM,):
        raise DataError(f"feature parts must have lengths 60/60/2, got {f.size}/{h.size}/{c.size}")
    ok = all(valid) if isinstance(valid, (tuple, list)) else bool(valid)
    return InteractionFeature(f, h, c, ok)


@dataclass(frozen=True)
class RawObservationFeatures:
    """Everything except the PCA step, so PCA can be fitted later on training data."""

    flow_diff: np.ndarray
    hog: np.ndarray | None
    colour_dist: np.ndarray
    valid: bool

    def finish(self, pca: PcaModel) -> InteractionFeature:
        if self.hog is None:
            return assemble(self.flow_diff, np.zeros(HOG_PCA_DIM), self.colour_dist, False)
        return assemble(self.flow_diff, pca_project(pca, self.hog), self.colour_dist, self.valid)


def observation_features(frame: FrameImage, flow: np.ndarray, hsv: np.ndarray, box: BoundingBox,
                         hand_mask: np.ndarray, cfg: PipelineConfig | None = None) -> RawObservationFeatures:
    cfg = cfg or PipelineConfig()
    regions = RegionTriple.from_box(frame.height, frame.width, box, hand_mask)
    pairs, flow_ok = flow_histograms(flow, regions, cfg)
    d1, d2, colour_ok = colour_distances(hsv, regions, cfg)
    hog = hog_raw(frame, box, cfg)
    return RawObservationFeatures(flow_difference(pairs), hog, np.array([d1, d2]),
                                  flow_ok and colour_ok and hog is not None)
