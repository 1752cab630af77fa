"""Hand mask and re-centred box from a verified detection box."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BoundingBox, FrameImage, PipelineConfig
from .imaging import Contour, SkinModel, back_project, dilate, edge_map, find_contours, morph_close, to_gray


@dataclass(frozen=True)
class SegmentationResult:
    recentred_box: BoundingBox
    mask: np.ndarray  # bool, recentred_box-local
    selected_contour: Contour  # frame coordinates
    candidates_considered: int


def box_edges(frame: FrameImage, box: BoundingBox, cfg: PipelineConfig) -> np.ndarray:
    """Closed edge mask inside ``box`` (box-local), maximum taken over the box."""
    ys, xs = box.slices()
    gray = to_gray(frame.pixels[ys, xs])
    edges = edge_map(gray, cfg.edge_threshold)
    return morph_close(edges, cfg.morph_radius, cfg.morph_iterations)


def candidate_contours(frame: FrameImage, box: BoundingBox, skin: SkinModel,
                       cfg: PipelineConfig | None = None, edges: np.ndarray | None = None) -> list[Contour]:
    """Skin blobs inside ``box`` cut along edges; contours are returned in frame coordinates."""
    cfg = cfg or PipelineConfig()
    ys, xs = box.slices()
    skin_mask = back_project(frame.pixels[ys, xs], skin, cfg.skin_threshold)
    if not skin_mask.any():
        return []
    if edges is None:
        edges = box_edges(frame, box, cfg)
    return [c.translated(box.x, box.y) for c in find_contours(skin_mask & ~edges)]


def passes_filters(contour: Contour, box: BoundingBox, cfg: PipelineConfig) -> bool:
    area_ok = cfg.contour_area_min_frac * box.area <= contour.area <= cfg.contour_area_max_frac * box.area
    arc_box_like = (cfg.contour_arc_min_frac * box.perimeter <= contour.arc_length
                    <= cfg.contour_arc_max_frac * box.perimeter)
    return area_ok and not arc_box_like


def recentre(contour: Contour, box: BoundingBox, frame_w: int, frame_h: int) -> BoundingBox:
    """Same-size box centred halfway between the contour centroid and its top pixel."""
    mx, my = contour.centroid
    tx, ty = contour.top_pixel
    nx, ny = (mx + tx) / 2.0, (my + ty) / 2.0
    x0 = int(round(nx - (box.w - 1) / 2.0))
    y0 = int(round(ny - (box.h - 1) / 2.0))
    return BoundingBox(x0, y0, box.w, box.h).clamp(frame_w, frame_h)


def select_hand_contour(candidates: list[Contour], box: BoundingBox, edges: np.ndarray,
                        cfg: PipelineConfig | None = None,
                        frame_size: tuple[int, int] | None = None) -> SegmentationResult | None:
    """Pick the hand among ``candidates`` (frame coordinates); None means the hand is lost.

    ``edges`` is the box-local edge mask.  ``frame_size`` is (width, height) and
    bounds the re-centred box; it defaults to the box itself.
    """
    cfg = cfg or PipelineConfig()
    fw, fh = frame_size or (box.x + box.w, box.y + box.h)
    survivors = [c for c in candidates if passes_filters(c, box, cfg)]
    if not survivors:
        return None
    grown = dilate(edges, cfg.overlap_dilate_radius) if edges.any() else edges
    best, best_key = None, None
    for c in survivors:
        local = c.translated(-box.x, -box.y).mask(box.h, box.w)
        overlap = np.count_nonzero(local & grown) / c.area
        key = (overlap, c.area)
        if best_key is None or key > best_key:
            best, best_key = c, key
    new_box = recentre(best, box, fw, fh)
    mask = best.translated(-new_box.x, -new_box.y).mask(new_box.h, new_box.w)
    if not mask.any():
        return None
    return SegmentationResult(new_box, mask, best, len(candidates))


def segment_hand(frame: FrameImage, box: BoundingBox, skin: SkinModel,
                 cfg: PipelineConfig | None = None) -> SegmentationResult | None:
    cfg = cfg or PipelineConfig()
    edges = box_edges(frame, box, cfg)
    cands = candidate_contours(frame, box, skin, cfg, edges=edges)
    if not cands:
        return None
    return select_hand_contour(cands, box, edges, cfg, (frame.width, frame.height))
