"""Synthetic scenes and recordings with known ground truth.

Used by the tests and by the ``synth`` CLI command to produce a small
multi-subject dataset (frames, detection sidecars, labels) that exercises the
whole pipeline without external data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import BoundingBox, Laterality, direction_of

SKIN_RGB = (220, 170, 135)
BLUE_RGB = (40, 60, 200)


# -- single-image scenes -----------------------------------------------------

def arm_scene(rng: np.random.Generator, angle_deg: float, size: int = 160, box_w: int = 40,
              ground: tuple[float, float] = (0.1, 0.6), arm_value: float = 0.8,
              hand_frac: float = 0.45, jitter: int = 10) -> tuple[np.ndarray, BoundingBox]:
    """Gray image of a uniform arm leaving the box centroid at ``angle_deg`` over noisy ground.

    The arm is as wide as the box and ends in a disc (the hand) at the centroid.
    """
    img = ground[0] + (ground[1] - ground[0]) * rng.random((size, size))
    c = size // 2 + int(rng.integers(-jitter, jitter + 1)) if jitter else size // 2
    box = BoundingBox(c - box_w // 2, c - box_w // 2, box_w, box_w)
    cx, cy = box.centroid
    yy, xx = np.mgrid[0:size, 0:size]
    dx, dy = direction_of(angle_deg)
    along = (xx - cx) * dx + (yy - cy) * dy
    across = -(xx - cx) * dy + (yy - cy) * dx
    img[(along >= 0) & (np.abs(across) <= box_w / 2.0)] = arm_value
    if hand_frac:
        img[(xx - cx) ** 2 + (yy - cy) ** 2 <= (box_w * hand_frac) ** 2] = arm_value
    return img, box


def _noisy(img: np.ndarray, rng: np.random.Generator, amp: int) -> np.ndarray:
    out = img.astype(np.int16) + rng.integers(-amp, amp + 1, img.shape)
    return np.clip(out, 0, 255).astype(np.uint8)


def ellipse_mask(h: int, w: int, cx: float, cy: float, ax: float, ay: float, theta_deg: float = 0.0):
    yy, xx = np.mgrid[0:h, 0:w]
    t = math.radians(theta_deg)
    u = (xx - cx) * math.cos(t) + (yy - cy) * math.sin(t)
    v = -(xx - cx) * math.sin(t) + (yy - cy) * math.cos(t)
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def skin_ellipse_scene(rng: np.random.Generator, size: tuple[int, int] = (120, 160), box_w: int = 60,
                       noise: int = 3) -> tuple[np.ndarray, BoundingBox, np.ndarray]:
    """Skin ellipse on blue ground; returns (rgb, box, ground-truth mask in frame coordinates)."""
    h, w = size
    x0 = int(rng.integers(0, w - box_w))
    y0 = int(rng.integers(0, h - box_w))
    box = BoundingBox(x0, y0, box_w, box_w)
    cx, cy = box.centroid
    ax = rng.uniform(0.25, 0.38) * box_w
    ay = rng.uniform(0.18, 0.30) * box_w
    truth = ellipse_mask(h, w, cx + rng.uniform(-3, 3), cy + rng.uniform(-3, 3), ax, ay, rng.uniform(0, 180))
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = BLUE_RGB
    img[truth] = SKIN_RGB
    return _noisy(img, rng, noise), box, truth


def touching_shapes_scene(noise: int = 0, seed: int = 0) -> tuple[np.ndarray, BoundingBox]:
    """Skin ellipse touching a skin-coloured rectangle of different brightness.

    Both are skin to the colour model, but the brightness step between them is a
    strong edge.
    """
    rng = np.random.default_rng(seed)
    h, w = 100, 100
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = BLUE_RGB
    img[30:70, 52:80] = (150, 105, 80)
    img[ellipse_mask(h, w, 38, 50, 15, 11)] = SKIN_RGB
    return (_noisy(img, rng, noise) if noise else img), BoundingBox(15, 20, 70, 60)


def translated_pair(rng: np.random.Generator, size: tuple[int, int] = (120, 160), shift: tuple[int, int] = (3, 0),
                    smooth: float = 1.5) -> tuple[np.ndarray, np.ndarray]:
    """Two RGB frames of a smooth random texture, the second shifted by ``shift`` (dx, dy) with wrap."""
    from scipy import ndimage

    h, w = size
    base = rng.random((h, w, 3))
    base = ndimage.gaussian_filter(base, (smooth, smooth, 0), mode="wrap")
    base = (base - base.min()) / (base.max() - base.min())
    a = (base * 255).astype(np.uint8)
    b = np.roll(a, shift=(shift[1], shift[0]), axis=(0, 1))
    return a, b


# -- recordings --------------------------------------------------------------

FRAME_W, FRAME_H = 160, 120
HAND_R = 10
ARM_W = 24
BOX = 36
OBJECT_A = (40, 150, 60)
OBJECT_B = (70, 200, 90)
CLUTTER_RGB = [(200, 190, 40), (150, 150, 150)]  # distinct from skin and from the held object
GROUND_PALETTE = [(70, 90, 150), (90, 90, 140), (60, 100, 130), (100, 80, 150)]
NOMINAL = {
    Laterality.LEFT: ((52.0, 48.0), 305.0),
    Laterality.RIGHT: ((108.0, 48.0), 235.0),
}


@dataclass
class HandScript:
    laterality: Laterality
    anchor: tuple[float, float]
    arm_angle: float
    interaction: np.ndarray  # per-frame bool
    waving: np.ndarray  # per-frame bool, idle motion without an object
    phase: float


@dataclass
class Recording:
    subject_id: str
    frames: list[np.ndarray]
    detections: list[dict]
    labels: list[dict]
    hands: list[HandScript] = field(default_factory=list)


def _script(rng: np.random.Generator, n: int, target: float) -> tuple[np.ndarray, np.ndarray]:
    """Alternating idle/interaction blocks with roughly ``target`` interaction fraction."""
    inter = np.zeros(n, dtype=bool)
    wave = np.zeros(n, dtype=bool)
    t = int(rng.integers(20, 80))
    mean_on = 150.0
    mean_off = mean_on * (1 - target) / max(target, 1e-3)
    while t < n:
        on = int(np.clip(rng.normal(mean_on, 30), 100, 240))
        inter[t:t + on] = True
        t += on
        off = int(np.clip(rng.normal(mean_off, 0.25 * mean_off), 90, 1000))
        # a short empty-handed movement in part of the idle gaps
        if rng.random() < 0.5 and off > 100:
            w0 = t + int(rng.integers(20, off - 60))
            wave[w0:w0 + 30] = True
        t += off
    return inter, wave & ~inter


def _ground(rng: np.random.Generator, subject_idx: int) -> np.ndarray:
    base = np.array(GROUND_PALETTE[subject_idx % len(GROUND_PALETTE)], dtype=np.float64)
    k = rng.uniform(0.3, 1.6, (FRAME_H, FRAME_W, 1))
    g = np.clip(base * k, 0, 255)
    # static clutter away from the hands
    for _ in range(3):
        x0 = int(rng.integers(0, FRAME_W - 22))
        y0 = int(rng.integers(95, FRAME_H - 10)) if rng.random() < 0.5 else int(rng.integers(0, 10))
        g[y0:y0 + 10, x0:x0 + 22] = CLUTTER_RGB[int(rng.integers(0, len(CLUTTER_RGB)))]
    return g


def _paint_disc(img, cx, cy, r, colour):
    x0, x1 = max(0, int(cx - r - 1)), min(FRAME_W, int(cx + r + 2))
    y0, y1 = max(0, int(cy - r - 1)), min(FRAME_H, int(cy + r + 2))
    yy, xx = np.mgrid[y0:y1, x0:x1]
    img[y0:y1, x0:x1][(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = colour


def _paint_arm(img, cx, cy, angle, width, colour, yy, xx):
    dx, dy = direction_of(angle)
    along = (xx - cx) * dx + (yy - cy) * dy
    across = -(xx - cx) * dy + (yy - cy) * dx
    img[(along >= 0) & (np.abs(across) <= width / 2.0)] = colour


def _paint_object(img, cx, cy, angle, t_offset):
    """Textured block held beyond the fingertips (opposite the arm)."""
    dx, dy = direction_of(angle)
    ox, oy = cx - dx * (HAND_R + 6), cy - dy * (HAND_R + 6)
    w, h = 16, 12
    x0, y0 = int(round(ox - w / 2)), int(round(oy - h / 2))
    xs0, ys0 = max(0, x0), max(0, y0)
    xs1, ys1 = min(FRAME_W, x0 + w), min(FRAME_H, y0 + h)
    if xs1 <= xs0 or ys1 <= ys0:
        return
    yy, xx = np.mgrid[ys0:ys1, xs0:xs1]
    # texture is fixed to the object so it moves with it
    checker = (((xx - x0) // 3 + (yy - y0) // 3) % 2).astype(bool)
    patch = np.where(checker[..., None], np.array(OBJECT_B, float), np.array(OBJECT_A, float))
    img[ys0:ys1, xs0:xs1] = patch


def _hand_offset(t: int, moving: bool, phase: float) -> tuple[float, float]:
    if not moving:
        return 0.0, 0.0
    return 6.0 * math.sin(2 * math.pi * t / 36.0 + phase), 3.0 * math.sin(2 * math.pi * t / 23.0 + phase)


def render_recording(subject_idx: int, n_frames: int, seed: int,
                     targets: dict[Laterality, float] | None = None) -> Recording:
    """Two-handed recording with scripted object interactions and matching sidecars."""
    rng = np.random.default_rng([seed, subject_idx])
    sid = f"S{subject_idx + 1}"
    targets = targets or {lat: float(rng.uniform(0.15, 0.7)) for lat in NOMINAL}
    ground = _ground(rng, subject_idx)
    hands = []
    for lat, ((ax, ay), ang) in NOMINAL.items():
        inter, wave = _script(rng, n_frames, targets[lat])
        hands.append(HandScript(lat, (ax + rng.uniform(-5, 5), ay + rng.uniform(-5, 5)),
                                ang + rng.uniform(-10, 10), inter, wave, float(rng.uniform(0, 2 * math.pi))))
    yy, xx = np.mgrid[0:FRAME_H, 0:FRAME_W]
    frames, dets, labels = [], [], []
    for t in range(n_frames):
        img = ground.copy()
        centres = []
        for hs in hands:
            moving = bool(hs.interaction[t] or hs.waving[t])
            ox, oy = _hand_offset(t, moving, hs.phase)
            cx, cy = hs.anchor[0] + ox, hs.anchor[1] + oy
            centres.append((cx, cy))
            _paint_arm(img, cx, cy, hs.arm_angle, ARM_W, SKIN_RGB, yy, xx)
            _paint_disc(img, cx, cy, HAND_R, SKIN_RGB)
            if hs.interaction[t]:
                _paint_object(img, cx, cy, hs.arm_angle, t)
        frame = _noisy(np.clip(img, 0, 255).astype(np.uint8), rng, 2)
        frames.append(frame)
        for hs, (cx, cy) in zip(hands, centres):
            labels.append({"frame": t, "laterality": hs.laterality.value,
                           "label": "interaction" if hs.interaction[t] else "no_interaction"})
            if rng.random() < 0.03:
                continue  # detector miss
            jx, jy = rng.integers(-2, 3, 2)
            x = int(np.clip(round(cx - BOX / 2) + jx, 0, FRAME_W - BOX))
            y = int(np.clip(round(cy - BOX / 2) + jy, 0, FRAME_H - BOX))
            dets.append({"frame": t, "x": x, "y": y, "w": BOX, "h": BOX,
                         "confidence": round(float(rng.uniform(0.8, 0.99)), 3)})
        if rng.random() < 0.03:
            dets.append({"frame": t, "x": int(rng.integers(0, FRAME_W - BOX)), "y": int(rng.integers(70, FRAME_H - BOX)),
                         "w": BOX, "h": BOX, "confidence": round(float(rng.uniform(0.3, 0.7)), 3)})
    return Recording(sid, frames, dets, labels, hands)


def verifier_recording(n_frames: int, seed: int) -> Recording:
    """Frames with both hands posed at random; each hand gives a positive box and each frame
    two background boxes that stay clear of skin.  Detections carry ``is_hand``."""
    rng = np.random.default_rng([seed, 9999])
    frames, dets = [], []
    yy, xx = np.mgrid[0:FRAME_H, 0:FRAME_W]
    for t in range(n_frames):
        img = _ground(rng, t)
        boxes = []
        for lat, ((ax, ay), ang) in NOMINAL.items():
            ox, oy = _hand_offset(t, rng.random() < 0.5, float(rng.uniform(0, 2 * math.pi)))
            cx, cy = ax + rng.uniform(-10, 10) + ox, ay + rng.uniform(-8, 8) + oy
            ang += rng.uniform(-15, 15)
            _paint_arm(img, cx, cy, ang, ARM_W, SKIN_RGB, yy, xx)
            _paint_disc(img, cx, cy, HAND_R, SKIN_RGB)
            if rng.random() < 0.5:
                _paint_object(img, cx, cy, ang, t)
            jx, jy = rng.integers(-2, 3, 2)
            boxes.append((int(np.clip(round(cx - BOX / 2) + jx, 0, FRAME_W - BOX)),
                          int(np.clip(round(cy - BOX / 2) + jy, 0, FRAME_H - BOX))))
        skin = np.all(img == np.array(SKIN_RGB, dtype=img.dtype), axis=2)
        frames.append(_noisy(np.clip(img, 0, 255).astype(np.uint8), rng, 2))
        for x, y in boxes:
            dets.append({"frame": t, "x": x, "y": y, "w": BOX, "h": BOX, "confidence": 0.95, "is_hand": True})
        placed = 0
        for _ in range(50):
            nx, ny = int(rng.integers(0, FRAME_W - BOX)), int(rng.integers(0, FRAME_H - BOX))
            if skin[ny:ny + BOX, nx:nx + BOX].mean() > 0.1:
                continue
            dets.append({"frame": t, "x": nx, "y": ny, "w": BOX, "h": BOX, "confidence": 0.5, "is_hand": False})
            placed += 1
            if placed == 2:
                break
    return Recording("verifier", frames, dets, [], [])


# -- writing -----------------------------------------------------------------

def write_frames(frames, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        Image.fromarray(f).save(directory / f"{i:06d}.png", optimize=False)


def write_jsonl(rows, path: Path) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def write_dataset(out_dir: str | Path, n_subjects: int = 3, n_frames: int = 600, seed: int = 0,
                  verifier_frames: int = 80, fps: float = 30.0) -> Path:
    """Render subjects plus a verifier-training recording; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"fps": fps, "subjects": []}
    # spread interaction fractions so subject-level metrics differ
    fracs = np.linspace(0.15, 0.7, 2 * n_subjects)
    order = np.random.default_rng(seed).permutation(len(fracs))
    for s in range(n_subjects):
        targets = {Laterality.LEFT: float(fracs[order[2 * s]]), Laterality.RIGHT: float(fracs[order[2 * s + 1]])}
        rec = render_recording(s, n_frames, seed, targets)
        sdir = out / rec.subject_id
        write_frames(rec.frames, sdir / "frames")
        write_jsonl(rec.detections, sdir / "detections.jsonl")
        write_jsonl(rec.labels, sdir / "labels.jsonl")
        manifest["subjects"].append({"id": rec.subject_id, "frames": f"{rec.subject_id}/frames",
                                     "detections": f"{rec.subject_id}/detections.jsonl",
                                     "labels": f"{rec.subject_id}/labels.jsonl"})
    ver = verifier_recording(verifier_frames, seed)
    write_frames(ver.frames, out / "verifier" / "frames")
    write_jsonl(ver.detections, out / "verifier" / "detections.jsonl")
    manifest["verifier"] = {"frames": "verifier/frames", "detections": "verifier/detections.jsonl"}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
