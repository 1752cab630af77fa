"""Low-level image primitives.

Images are plain numpy arrays: grey images are float64 ``(h, w)`` in [0, 1],
binary masks are bool ``(h, w)`` and RGB frames are uint8 ``(h, w, 3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import DataError, FrameImage

SKIN_TABLE_SIZE = 32 * 32 * 32
_EIGHT = np.ones((3, 3), dtype=bool)


def _rgb(frame) -> np.ndarray:
    return frame.pixels if isinstance(frame, FrameImage) else np.asarray(frame)


def to_gray(frame) -> np.ndarray:
    px = _rgb(frame).astype(np.float64)
    return (0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]) / 255.0


def rgb_to_hsv(frame) -> np.ndarray:
    """Hexcone HSV; returns ``(h, w, 3)`` with hue in degrees [0, 360), s and v in [0, 1].

    Hue is 0 wherever saturation is 0.
    """
    px = _rgb(frame).astype(np.float64) / 255.0
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    v = px.max(axis=-1)
    c = v - px.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    safe = np.where(c > 0, c, 1.0)
    h = np.zeros_like(v)
    rmax = (v == r) & (c > 0)
    gmax = (v == g) & (c > 0) & ~rmax
    bmax = (c > 0) & ~rmax & ~gmax
    h[rmax] = np.mod((g - b)[rmax] / safe[rmax], 6.0)
    h[gmax] = (b - r)[gmax] / safe[gmax] + 2.0
    h[bmax] = (r - g)[bmax] / safe[bmax] + 4.0
    h = np.mod(h * 60.0, 360.0)
    return np.stack([h, s, v], axis=-1)


# -- skin colour model -------------------------------------------------------

@dataclass(frozen=True)
class SkinModel:
    """Skin probability per 5-bit-quantised RGB value, index ``(r<<10)|(g<<5)|b``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64).ravel()
        if t.size != SKIN_TABLE_SIZE:
            raise DataError(f"skin table must hold {SKIN_TABLE_SIZE} entries, got {t.size}")
        if not np.all((t >= 0) & (t <= 1)):
            raise DataError("skin probabilities must lie in [0, 1]")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def probability(self, frame) -> np.ndarray:
        px = _rgb(frame).astype(np.int32) >> 3
        return self.table[(px[..., 0] << 10) | (px[..., 1] << 5) | px[..., 2]]

    # binary layout: 32768 little-endian float32, no header
    def save(self, path: str | Path) -> None:
        p = Path(path)
        if p.suffix.lower() == ".csv":
            lines = ["index,probability"] + [f"{i},{v:.9g}" for i, v in enumerate(self.table)]
            p.write_text("\n".join(lines) + "\n")
        else:
            p.write_bytes(self.table.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "SkinModel":
        p = Path(path)
        if p.suffix.lower() == ".csv":
            vals = []
            for ln in p.read_text().splitlines():
                ln = ln.strip()
                if not ln or ln[0].isalpha():
                    continue
                vals.append(float(ln.split(",")[-1]))
            return cls(np.array(vals))
        raw = p.read_bytes()
        if len(raw) != 4 * SKIN_TABLE_SIZE:
            raise DataError(f"{p}: expected {4 * SKIN_TABLE_SIZE} bytes, got {len(raw)}")
        return cls(np.frombuffer(raw, dtype="<f4").astype(np.float64))

    @classmethod
    def default(cls) -> "SkinModel":
        ref = resources.files("handuse") / "data" / "skin_rgb_mog.bin"
        return cls(np.frombuffer(ref.read_bytes(), dtype="<f4").astype(np.float64))


# Jones & Rehg (2002) 16-component RGB mixtures: mean, diagonal covariance, weight.
_SKIN_MOG = np.array([
    [73.53, 29.94, 17.76, 765.40, 121.44, 112.80, 0.0294],
    [249.71, 233.94, 217.49, 39.94, 154.44, 396.05, 0.0331],
    [161.68, 116.25, 96.95, 291.03, 60.48, 162.85, 0.0654],
    [186.07, 136.62, 114.40, 274.95, 64.60, 198.27, 0.0756],
    [189.26, 98.37, 51.18, 633.18, 222.40, 250.69, 0.0554],
    [247.00, 152.20, 90.84, 65.23, 691.53, 609.92, 0.0314],
    [150.10, 72.66, 37.76, 408.63, 200.77, 257.57, 0.0454],
    [206.85, 171.09, 156.34, 530.08, 155.08, 572.79, 0.0469],
    [212.78, 152.82, 120.04, 160.57, 84.52, 243.90, 0.0956],
    [234.87, 175.43, 138.94, 163.80, 121.57, 279.22, 0.0763],
    [151.19, 97.74, 74.59, 425.40, 73.56, 175.11, 0.1100],
    [120.52, 77.55, 59.82, 330.45, 70.34, 151.82, 0.0676],
    [192.20, 119.62, 82.32, 152.76, 92.14, 259.15, 0.0755],
    [214.29, 136.08, 87.24, 204.90, 140.17, 270.19, 0.0500],
    [99.57, 54.33, 38.06, 448.13, 90.18, 151.29, 0.0667],
    [238.88, 203.08, 176.91, 178.38, 156.27, 404.99, 0.0749],
])
_NONSKIN_MOG = np.array([
    [254.37, 254.41, 253.82, 2.77, 2.81, 5.46, 0.0637],
    [9.39, 8.09, 8.52, 46.84, 33.59, 32.48, 0.0516],
    [96.57, 96.95, 91.53, 280.69, 156.79, 436.58, 0.0864],
    [160.44, 162.49, 159.06, 355.98, 115.89, 591.24, 0.0636],
    [74.98, 63.23, 46.33, 414.84, 245.95, 361.27, 0.0747],
    [121.83, 60.88, 18.31, 2502.24, 1383.53, 237.18, 0.0365],
    [202.18, 154.88, 91.04, 957.42, 1766.94, 1582.52, 0.0349],
    [193.06, 201.93, 206.55, 562.88, 190.23, 447.28, 0.0649],
    [51.88, 57.14, 61.55, 344.11, 191.77, 433.40, 0.0656],
    [30.88, 26.84, 25.32, 222.07, 118.65, 182.41, 0.1189],
    [44.97, 85.96, 131.95, 651.32, 840.52, 963.67, 0.0362],
    [236.02, 236.27, 230.70, 225.03, 117.29, 331.95, 0.0849],
    [207.86, 191.20, 164.12, 494.04, 237.69, 533.52, 0.0368],
    [99.83, 148.11, 188.17, 955.88, 654.95, 916.70, 0.0389],
    [135.06, 131.92, 123.10, 350.35, 130.30, 388.43, 0.0943],
    [135.96, 103.89, 66.88, 806.44, 642.20, 350.36, 0.0477],
])


def _mog_log_density(rgb: np.ndarray, mog: np.ndarray) -> np.ndarray:
    mean, var, w = mog[:, :3], mog[:, 3:6], mog[:, 6]
    d = rgb[:, None, :] - mean[None]
    log_comp = (np.log(w) - 0.5 * np.log((2 * np.pi) ** 3 * var.prod(axis=1)))[None] \
        - 0.5 * (d * d / var[None]).sum(axis=2)
    top = log_comp.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(log_comp - top).sum(axis=1, keepdims=True)))[:, 0]


def build_skin_table(skin_prior: float = 0.5) -> np.ndarray:
    """Posterior P(skin | rgb) at each quantisation-cell centre."""
    q = np.arange(32) * 8 + 4.0
    r, g, b = np.meshgrid(q, q, q, indexing="ij")
    rgb = np.stack([r.ravel(), g.ravel(), b.ravel()], axis=1)
    ls = _mog_log_density(rgb, _SKIN_MOG) + math.log(skin_prior)
    ln = _mog_log_density(rgb, _NONSKIN_MOG) + math.log(1 - skin_prior)
    return 1.0 / (1.0 + np.exp(np.clip(ln - ls, -700, 700)))


# below this peak probability a region is treated as containing no skin at all;
# otherwise a relative threshold would select e.g. all of a pure-blue region
SKIN_PEAK_FLOOR = 1e-3


def back_project(frame, model: SkinModel, threshold_frac: float, floor: float = SKIN_PEAK_FLOOR) -> np.ndarray:
    """Pixels whose skin probability reaches ``threshold_frac`` of the region's peak."""
    if not 0.0 < threshold_frac <= 1.0:
        raise ValueError("threshold_frac must be in (0, 1]")
    prob = model.probability(frame)
    top = prob.max() if prob.size else 0.0
    if top <= 0 or top < floor:
        return np.zeros(prob.shape, dtype=bool)
    return prob >= threshold_frac * top


# -- morphology and contours -------------------------------------------------

def _square(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    return ndimage.binary_dilation(mask, structure=_square(radius))


def morph_close(mask: np.ndarray, radius: int = 1, iterations: int = 1) -> np.ndarray:
    """Dilate ``iterations`` times, then erode as often, with a (2r+1) square element.

    Computed on a zero-padded canvas wide enough for the dilation, so shapes
    near the border neither merge with it nor get eaten away.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    se = _square(radius)
    pad = radius * iterations
    out = ndimage.binary_dilation(np.pad(mask, pad), structure=se, iterations=iterations)
    out = ndimage.binary_erosion(out, structure=se, iterations=iterations, border_value=0)
    return out[pad:-pad, pad:-pad]


@dataclass(frozen=True)
class Contour:
    """Outer boundary of one 8-connected component.

    ``points`` is the ordered boundary chain as (x, y) rows, ``filled`` the
    component with holes filled, placed at ``origin`` (x0, y0).
    """

    points: np.ndarray
    area: int
    arc_length: float
    filled: np.ndarray
    origin: tuple[int, int]

    def translated(self, dx: int, dy: int) -> "Contour":
        return Contour(self.points + np.array([dx, dy]), self.area, self.arc_length,
                       self.filled, (self.origin[0] + dx, self.origin[1] + dy))

    def mask(self, height: int, width: int) -> np.ndarray:
        out = np.zeros((height, width), dtype=bool)
        x0, y0 = self.origin
        fh, fw = self.filled.shape
        sx0, sy0 = max(0, -x0), max(0, -y0)
        dx0, dy0 = max(0, x0), max(0, y0)
        dx1, dy1 = min(width, x0 + fw), min(height, y0 + fh)
        if dx1 > dx0 and dy1 > dy0:
            out[dy0:dy1, dx0:dx1] = self.filled[sy0:sy0 + dy1 - dy0, sx0:sx0 + dx1 - dx0]
        return out

    @property
    def centroid(self) -> tuple[float, float]:
        ys, xs = np.nonzero(self.filled)
        return float(xs.mean() + self.origin[0]), float(ys.mean() + self.origin[1])

    @property
    def top_pixel(self) -> tuple[int, int]:
        """Set pixel with minimum y, ties to the smallest x."""
        ys, xs = np.nonzero(self.filled)
        y = ys.min()
        x = xs[ys == y].min()
        return int(x + self.origin[0]), int(y + self.origin[1])


# clockwise in image coordinates (y down), starting west
_NBRS = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]
_NBR_INDEX = {d: i for i, d in enumerate(_NBRS)}


def _trace_boundary(comp: np.ndarray) -> list[tuple[int, int]]:
    """Moore-neighbour trace of a padded single-component mask; returns (y, x) chain."""
    ys, xs = np.nonzero(comp)
    start = (int(ys[0]), int(xs[0]))  # raster-first, so its west neighbour is background
    cur, back = start, (start[0], start[1] - 1)
    chain = [start]
    seen = {(cur, back)}
    while True:
        k = _NBR_INDEX[(back[0] - cur[0], back[1] - cur[1])]
        nxt = None
        prev = back
        for step in range(1, 9):
            dy, dx = _NBRS[(k + step) % 8]
            cand = (cur[0] + dy, cur[1] + dx)
            if comp[cand]:
                nxt = cand
                break
            prev = cand
        if nxt is None:
            return chain  # isolated pixel
        cur, back = nxt, prev
        if (cur, back) in seen:
            return chain
        seen.add((cur, back))
        chain.append(cur)


def chain_length(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    d = np.diff(np.vstack([points, points[:1]]), axis=0)
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def find_contours(mask: np.ndarray) -> list[Contour]:
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        comp = labels[sl] == i
        filled = ndimage.binary_fill_holes(comp)
        padded = np.pad(comp, 1)
        chain = _trace_boundary(padded)
        pts = np.array([(x - 1 + sl[1].start, y - 1 + sl[0].start) for y, x in chain], dtype=np.int64)
        out.append(Contour(pts, int(filled.sum()), chain_length(pts), filled,
                           (sl[1].start, sl[0].start)))
    return out


# -- edges -------------------------------------------------------------------

def gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences in the interior, one-sided at the border: (gx, gy)."""
    g = np.asarray(gray, dtype=np.float64)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    if g.shape[1] > 1:
        gx = np.gradient(g, axis=1)
    if g.shape[0] > 1:
        gy = np.gradient(g, axis=0)
    return gx, gy


def edge_strength(gray: np.ndarray) -> np.ndarray:
    gx, gy = gradients(gray)
    return np.hypot(gx, gy)


def edge_map(gray: np.ndarray, threshold_frac: float, operator=edge_strength) -> np.ndarray:
    """Binary edges: strength >= threshold_frac * max strength.

    ``operator`` maps a grey image to a non-negative strength map; any learned
    edge detector can be plugged in here.
    """
    if not 0.0 < threshold_frac <= 1.0:
        raise ValueError("threshold_frac must be in (0, 1]")
    s = operator(gray)
    top = s.max() if s.size else 0.0
    if top <= 1e-12:
        return np.zeros(s.shape, dtype=bool)
    return s >= threshold_frac * top


# -- sampling ----------------------------------------------------------------

def sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear samples at pixel-centre coordinates; returns (values, inside)."""
    h, w = img.shape
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    x = np.clip(xs, 0, w - 1)
    y = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy, inside


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    vals, _ = sample_bilinear(img, xs[None, :].repeat(out_h, 0), ys[:, None].repeat(out_w, 1))
    return vals
