"""Dense optical flow.

The reference backend is coarse-to-fine block matching: a 3-level image
pyramid, 8x8 blocks matched by sum of absolute differences within +-4 px of
the prediction carried up from the coarser level.  Block displacements are
bilinearly interpolated to a per-pixel field.  Any callable with the
``dense_flow(prev, curr) -> (h, w, 2)`` signature can stand in for it.
"""

from __future__ import annotations

import numpy as np

from .core import DataError


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _interp_grid(field: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear lookup of a (ny, nx, 2) grid at fractional grid coordinates."""
    ny, nx = field.shape[:2]
    ys = np.clip(ys, 0, ny - 1)
    xs = np.clip(xs, 0, nx - 1)
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(ny - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(nx - 2, 0))
    y1 = np.minimum(y0 + 1, ny - 1)
    x1 = np.minimum(x0 + 1, nx - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    a = field[y0][:, x0]
    b = field[y0][:, x1]
    c = field[y1][:, x0]
    d = field[y1][:, x1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def _block_centres(n_blocks: int, block: int) -> np.ndarray:
    return np.arange(n_blocks) * block + (block - 1) / 2.0


class BlockMatchingFlow:
    def __init__(self, levels: int = 3, block: int = 8, radius: int = 4):
        if levels < 1 or block < 1 or radius < 0:
            raise ValueError("levels and block must be >= 1, radius >= 0")
        self.levels = levels
        self.block = block
        self.radius = radius
        r = radius
        offs = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
        # argmin keeps the first minimum, so ties resolve toward the prediction
        offs.sort(key=lambda o: (o[0] ** 2 + o[1] ** 2, o[0], o[1]))
        self._offsets = np.array(offs, dtype=np.intp)

    def __call__(self, prev: np.ndarray, curr: np.ndarray) -> np.ndarray:
        prev = np.asarray(prev, dtype=np.float64)
        curr = np.asarray(curr, dtype=np.float64)
        if prev.shape != curr.shape:
            raise DataError(f"flow frames differ in size: {prev.shape} vs {curr.shape}")
        pyr = [(prev, curr)]
        for _ in range(self.levels - 1):
            p, c = pyr[-1]
            if min(p.shape) < 2 * self.block:
                break
            pyr.append((_downsample(p), _downsample(c)))

        b = self.block
        field = None
        for level in range(len(pyr) - 1, -1, -1):
            p, c = pyr[level]
            h, w = p.shape
            nby, nbx = -(-h // b), -(-w // b)
            if field is None:
                pred = np.zeros((nby, nbx, 2), dtype=np.intp)
            else:
                cy = _block_centres(nby, b)
                cx = _block_centres(nbx, b)
                # this level's block centres in coarse-pixel, then coarse-block, coordinates
                gy = ((cy + 0.5) / 2 - 0.5 - (b - 1) / 2.0) / b
                gx = ((cx + 0.5) / 2 - 0.5 - (b - 1) / 2.0) / b
                pred = np.rint(2.0 * _interp_grid(field, gy, gx)).astype(np.intp)
            field = self._match(p, c, pred).astype(np.float64)

        h, w = prev.shape
        nby, nbx = field.shape[:2]
        gy = (np.arange(h) - (b - 1) / 2.0) / b
        gx = (np.arange(w) - (b - 1) / 2.0) / b
        dense = _interp_grid(field, gy, gx)
        # stored as (dx, dy)
        return np.ascontiguousarray(dense[..., ::-1])

    def _match(self, p: np.ndarray, c: np.ndarray, pred: np.ndarray) -> np.ndarray:
        b = self.block
        h, w = p.shape
        nby, nbx = pred.shape[:2]
        pp = np.pad(p, ((0, nby * b - h), (0, nbx * b - w)), mode="edge")
        blocks = pp.reshape(nby, b, nbx, b).transpose(0, 2, 1, 3)

        margin = int(np.abs(pred).max(initial=0)) + self.radius + 1
        cp = np.pad(c, ((margin, margin + nby * b - h), (margin, margin + nbx * b - w)), mode="edge")
        iy = np.arange(b)
        base_y = (np.arange(nby) * b)[:, None] + pred[..., 0] + margin  # (nby, nbx)
        base_x = (np.arange(nbx) * b)[None, :] + pred[..., 1] + margin

        costs = np.empty((len(self._offsets), nby, nbx))
        for k, (dy, dx) in enumerate(self._offsets):
            rows = (base_y + dy)[:, :, None, None] + iy[None, None, :, None]
            cols = (base_x + dx)[:, :, None, None] + iy[None, None, None, :]
            costs[k] = np.abs(cp[rows, cols] - blocks).sum(axis=(2, 3))
        best = np.argmin(costs, axis=0)
        return pred + self._offsets[best]


_default = BlockMatchingFlow()


def dense_flow(prev: np.ndarray, curr: np.ndarray) -> np.ndarray:
    """Per-pixel ``(dx, dy)`` displacement from ``prev`` to ``curr``; shape ``(h, w, 2)``."""
    return _default(prev, curr)
