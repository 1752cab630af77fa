"""Per-frame processing and the train / infer / leave-one-subject-out drivers.

Per detection: rotating-strip feature -> verify -> laterality -> segment ->
raw features.  Raw features (HOG before PCA) are cached per recording in an
``ObservationSet`` so PCA and the interaction forest can be refitted per fold
without touching the frames again.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .classify import ForestModel, Label, LabelledSample, forest_fit
from .core import (DataError, FrameImage, HandObservation, Laterality, MissingInputError, ModelError,
                   PipelineConfig)
from .evaluation import (ConfusionCounts, confusion, correlations, loso_split_indices)
from .features import FEATURE_DIM, PcaModel, observation_features, pca_fit
from .flow import dense_flow
from .handid import haar_feature, laterality, train_verifier, verify_many
from .imaging import SkinModel, rgb_to_hsv, to_gray
from .io import DetectionRecord, frame_files, ingest_detections, ingest_frames, ingest_labels, label_states
from .segmentation import box_edges, candidate_contours, select_hand_contour
from .timeline import (Decision, Timeline, UseMetrics, assign_detections, finalize, metrics, prolong,
                       write_metrics_json, write_timelines_csv)

log = logging.getLogger(__name__)

LAT_CODES = {Laterality.LEFT: 0, Laterality.RIGHT: 1, Laterality.OTHER: 2}
LAT_FROM_CODE = {v: k for k, v in LAT_CODES.items()}
HANDS = (Laterality.LEFT, Laterality.RIGHT)


@dataclass(frozen=True)
class Models:
    verifier: ForestModel
    pca: PcaModel | None = None
    interaction: ForestModel | None = None
    skin: SkinModel = field(default_factory=SkinModel.default)


def _load(loader, path, what: str):
    if path is None:
        raise MissingInputError(f"no {what} model given")
    if not Path(path).is_file():
        raise MissingInputError(f"{what} model not found: {path}")
    return loader(path)


def load_models(verifier: str | Path, pca: str | Path | None = None, interaction: str | Path | None = None,
                skin: str | Path | None = None, need_classifier: bool = True) -> Models:
    """Load every model up front so a missing file fails before any frame is processed."""
    v = _load(ForestModel.load, verifier, "verifier")
    p = _load(PcaModel.load, pca, "PCA") if (pca is not None or need_classifier) else None
    m = _load(ForestModel.load, interaction, "interaction") if (interaction is not None or need_classifier) else None
    if m is not None and m.feature_dim != FEATURE_DIM:
        raise ModelError(f"interaction model expects {m.feature_dim} values, the pipeline makes {FEATURE_DIM}")
    if v.feature_dim != 72:
        raise ModelError(f"verifier expects {v.feature_dim} values, the strip feature has 72")
    s = SkinModel.load(skin) if skin is not None else SkinModel.default()
    return Models(v, p, m, s)


# -- per-frame processing ----------------------------------------------------

@dataclass(frozen=True)
class FrameOutcome:
    observations: list  # (HandObservation, RawObservationFeatures)
    n_detections: int
    n_verified: int


def process_frame(prev: FrameImage | None, frame: FrameImage, detections: Sequence[DetectionRecord],
                  models: Models, cfg: PipelineConfig, debug_dir: Path | None = None) -> FrameOutcome:
    gray = to_gray(frame.pixels)
    flow = hsv = None  # computed once a hand survives segmentation
    out = []
    verified = 0
    debug = [] if debug_dir is not None else None
    feats = [haar_feature(gray, det.box, cfg) for det in detections]
    accepted = verify_many(np.array(feats), models.verifier) if feats else []
    for det, hf, ok in zip(detections, feats, accepted):
        box = det.box
        if not ok:
            if debug is not None:
                debug.append((box, None, [], None))
            continue
        verified += 1
        lat = laterality(hf)
        edges = box_edges(frame, box, cfg)
        cands = candidate_contours(frame, box, models.skin, cfg, edges=edges)
        seg = select_hand_contour(cands, box, edges, cfg, (frame.width, frame.height)) if cands else None
        if debug is not None:
            debug.append((box, seg, cands, lat))
        if seg is None:
            continue  # hand lost
        obs = HandObservation(frame.index, box, seg.recentred_box, lat, seg.mask, det.confidence)
        if flow is None:
            flow = dense_flow(to_gray(prev.pixels) if prev is not None else gray, gray)
            hsv = rgb_to_hsv(frame.pixels)
        raw = observation_features(frame, flow, hsv, seg.recentred_box, seg.mask, cfg)
        out.append((obs, raw))
    if debug is not None:
        write_debug_png(frame, debug, debug_dir / f"frame_{frame.index:06d}.png")
    return FrameOutcome(out, len(detections), verified)


def write_debug_png(frame: FrameImage, items, path: Path) -> None:
    """Hand masks tinted red, candidate outlines yellow, detection boxes white (grey if rejected),
    re-centred boxes green."""
    img = frame.pixels.astype(np.float64).copy()
    for _, seg, _, _ in items:
        if seg is not None:
            ys, xs = seg.recentred_box.slices()
            region = img[ys, xs]
            region[seg.mask] = 0.5 * region[seg.mask] + 0.5 * np.array([255.0, 0, 0])
    pil = Image.fromarray(img.astype(np.uint8))
    draw = ImageDraw.Draw(pil)
    for box, seg, cands, lat in items:
        for c in cands:
            draw.point([tuple(p) for p in c.points.tolist()], fill=(255, 255, 0))
        colour = (255, 255, 255) if lat is not None else (128, 128, 128)
        draw.rectangle([box.x, box.y, box.x + box.w - 1, box.y + box.h - 1], outline=colour)
        if lat is not None:
            draw.text((box.x + 1, box.y + 1), lat.value[0].upper(), fill=colour)
        if seg is not None:
            rb = seg.recentred_box
            draw.rectangle([rb.x, rb.y, rb.x + rb.w - 1, rb.y + rb.h - 1], outline=(0, 255, 0))
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path)


# -- observation sets --------------------------------------------------------

@dataclass
class ObservationSet:
    """Raw per-observation features of one recording, in (frame, detection) order."""

    n_frames: int
    fps: float
    frame_index: np.ndarray  # int64 (n,)
    laterality: np.ndarray  # int8 codes (n,)
    confidence: np.ndarray  # float64 (n,)
    boxes: np.ndarray  # int64 (n, 4) detected
    recentred: np.ndarray  # int64 (n, 4)
    flow_diff: np.ndarray  # (n, 60)
    hog: np.ndarray  # (n, 960), zeros where has_hog is False
    has_hog: np.ndarray  # bool (n,)
    colour: np.ndarray  # (n, 2)
    valid: np.ndarray  # bool (n,)
    n_detections: int = 0
    n_verified: int = 0
    fingerprint: str = ""

    def __len__(self) -> int:
        return len(self.frame_index)

    def lateralities(self) -> list[Laterality]:
        return [LAT_FROM_CODE[int(c)] for c in self.laterality]

    @classmethod
    def from_outcomes(cls, outcomes: Sequence[FrameOutcome], n_frames: int, fps: float, hog_dim: int = 960):
        rows = [(o, r) for fo in outcomes for o, r in fo.observations]
        n = len(rows)

        def box_arr(b):
            return [b.x, b.y, b.w, b.h]

        return cls(
            n_frames=n_frames, fps=fps,
            frame_index=np.array([o.frame_index for o, _ in rows], dtype=np.int64),
            laterality=np.array([LAT_CODES[o.laterality] for o, _ in rows], dtype=np.int8),
            confidence=np.array([o.detector_confidence for o, _ in rows], dtype=np.float64),
            boxes=np.array([box_arr(o.box) for o, _ in rows], dtype=np.int64).reshape(n, 4),
            recentred=np.array([box_arr(o.recentred_box) for o, _ in rows], dtype=np.int64).reshape(n, 4),
            flow_diff=np.array([r.flow_diff for _, r in rows], dtype=np.float64).reshape(n, 60),
            hog=np.array([r.hog if r.hog is not None else np.zeros(hog_dim) for _, r in rows],
                         dtype=np.float64).reshape(n, hog_dim),
            has_hog=np.array([r.hog is not None for _, r in rows], dtype=bool),
            colour=np.array([r.colour_dist for _, r in rows], dtype=np.float64).reshape(n, 2),
            valid=np.array([r.valid for _, r in rows], dtype=bool),
            n_detections=sum(fo.n_detections for fo in outcomes),
            n_verified=sum(fo.n_verified for fo in outcomes),
        )

    def save(self, path: str | Path) -> None:
        arrays = {k: getattr(self, k) for k in ("frame_index", "laterality", "confidence", "boxes", "recentred",
                                               "flow_diff", "hog", "has_hog", "colour", "valid")}
        meta = json.dumps({"n_frames": self.n_frames, "fps": self.fps, "n_detections": self.n_detections,
                           "n_verified": self.n_verified, "fingerprint": self.fingerprint})
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "ObservationSet":
        if not Path(path).is_file():
            raise MissingInputError(f"observation file not found: {path}")
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            arrays = {k: z[k] for k in z.files if k != "meta"}
        return cls(meta["n_frames"], meta["fps"], n_detections=meta["n_detections"],
                   n_verified=meta["n_verified"], fingerprint=meta["fingerprint"], **arrays)

    def features(self, pca: PcaModel) -> np.ndarray:
        """122-value rows for every observation (rows of invalid observations are still filled)."""
        hog = np.zeros((len(self), pca.dim))
        if len(self):
            hog = (self.hog - pca.mean) @ pca.components.T
        return np.hstack([self.flow_diff, hog, self.colour])


def _process_chunk(args):
    """``frames`` holds the chunk's frames; ``prev`` the frame before the chunk, if any."""
    prev, frames, dets_by_frame, models, cfg, debug_dir = args
    out = []
    for f in frames:
        out.append(process_frame(prev, f, dets_by_frame.get(f.index, []), models, cfg, debug_dir))
        prev = f
    return out


def extract_observations(frames: Sequence[FrameImage], detections: Sequence[DetectionRecord], models: Models,
                         cfg: PipelineConfig | None = None, jobs: int = 1,
                         debug_dir: str | Path | None = None) -> ObservationSet:
    """Run verification, laterality, segmentation and raw features over a recording.

    With ``jobs > 1`` contiguous frame chunks go to worker processes; results
    are reassembled in frame order, so the output does not depend on ``jobs``.
    """
    cfg = cfg or PipelineConfig()
    n = len(frames)
    by_frame: dict[int, list[DetectionRecord]] = {}
    for d in detections:
        if not 0 <= d.frame_index < n:
            raise DataError(f"detection for frame {d.frame_index} but the recording has {n} frames")
        by_frame.setdefault(d.frame_index, []).append(d)
    ddir = Path(debug_dir) if debug_dir is not None else None
    fps = frames[0].fps if frames else cfg.fps
    if jobs <= 1 or n < 2 * jobs:
        outcomes = _process_chunk((None, list(frames), by_frame, models, cfg, ddir))
    else:
        bounds = np.linspace(0, n, jobs + 1).astype(int)
        tasks = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            prev = frames[a - 1] if a > 0 else None  # flow of frame a needs its predecessor
            sub = {i: by_frame[i] for i in range(a, b) if i in by_frame}
            tasks.append((prev, list(frames[a:b]), sub, models, cfg, ddir))
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = [o for chunk in ex.map(_process_chunk, tasks) for o in chunk]
    return ObservationSet.from_outcomes(outcomes, n, fps, cfg.hog_raw_dim)


def recording_fingerprint(frames_dir: Path, detections: Path, models: Models, cfg: PipelineConfig) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    h.update(models.verifier.to_bytes())
    h.update(models.skin.table.astype("<f4").tobytes())
    h.update(Path(detections).read_bytes())
    for p in frame_files(frames_dir):
        st = p.stat()
        h.update(f"{p.name}:{st.st_size}:{st.st_mtime_ns}".encode())
    return h.hexdigest()


def observe_recording(frames_dir: Path, detections_path: Path, models: Models, cfg: PipelineConfig,
                      jobs: int = 1, cache: Path | None = None, debug_dir: Path | None = None) -> ObservationSet:
    """Extract a recording's observations, reusing ``cache`` when its fingerprint matches."""
    fp = recording_fingerprint(frames_dir, detections_path, models, cfg) if cache is not None else ""
    if cache is not None and cache.is_file() and debug_dir is None:
        obs = ObservationSet.load(cache)
        if obs.fingerprint == fp:
            log.info("reusing cached observations %s", cache)
            return obs
    frames = ingest_frames(frames_dir, cfg.fps)
    dets = ingest_detections(detections_path, (frames[0].width, frames[0].height), len(frames))
    obs = extract_observations(frames, dets, models, cfg, jobs, debug_dir)
    obs.fingerprint = fp
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        obs.save(cache)
    return obs


# -- training ----------------------------------------------------------------

def verifier_training_data(frames: Sequence[FrameImage], detections: Sequence[DetectionRecord],
                           cfg: PipelineConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    cfg = cfg or PipelineConfig()
    grays: dict[int, np.ndarray] = {}
    X, y = [], []
    for d in detections:
        if d.is_hand is None:
            raise DataError(f"verifier training detection in frame {d.frame_index} lacks is_hand")
        if d.frame_index not in grays:
            grays[d.frame_index] = to_gray(frames[d.frame_index].pixels)
        X.append(haar_feature(grays[d.frame_index], d.box, cfg))
        y.append(int(d.is_hand))
    if not X:
        raise DataError("no verifier training detections")
    return np.array(X), np.array(y)


def fit_verifier(frames_dir: Path, detections_path: Path, cfg: PipelineConfig, seed: int | None = None) -> ForestModel:
    frames = ingest_frames(frames_dir, cfg.fps)
    dets = ingest_detections(detections_path, (frames[0].width, frames[0].height), len(frames))
    X, y = verifier_training_data(frames, dets, cfg)
    return train_verifier(X, y, cfg, seed)


def fit_pca_on(sets: Sequence[ObservationSet], cfg: PipelineConfig, seed: int | None = None) -> PcaModel:
    rows = [o.hog[o.valid] for o in sets]
    hog = np.vstack(rows) if rows else np.zeros((0, cfg.hog_raw_dim))
    return pca_fit(hog, cfg.pca_dim, seed)


def labelled_samples(obs: ObservationSet, labels: dict, subject_id: str, pca: PcaModel) -> list[LabelledSample]:
    """Valid observations that carry a label for their (frame, laterality).

    Observations whose laterality has no label (for example a hand given the
    wrong side) are left out, as are invalid ones.
    """
    X = obs.features(pca)
    out = []
    for i, lat in enumerate(obs.lateralities()):
        if not obs.valid[i]:
            continue
        key = (int(obs.frame_index[i]), lat)
        if key not in labels:
            continue
        out.append(LabelledSample(X[i], Label(int(labels[key])), subject_id, key[0], lat))
    return out


def _dedupe(samples: list[LabelledSample]) -> list[LabelledSample]:
    """One sample per (subject, frame, laterality): keep the first."""
    seen, out = set(), []
    for s in samples:
        if s.key not in seen:
            seen.add(s.key)
            out.append(s)
    return out


def fit_interaction(samples: Sequence[LabelledSample], cfg: PipelineConfig, seed: int | None = None) -> ForestModel:
    return forest_fit(_dedupe(list(samples)), cfg, seed)


# -- inference ---------------------------------------------------------------

@dataclass
class InferResult:
    raw: dict[Laterality, Timeline]
    final: dict[Laterality, Timeline]
    metrics: dict[Laterality, UseMetrics]
    report: dict


def decisions_for(obs: ObservationSet, models: Models) -> list[Decision]:
    if models.pca is None or models.interaction is None:
        raise ModelError("inference needs the PCA and interaction models")
    keep = np.flatnonzero(obs.valid)
    if len(keep) == 0:
        return []
    X = obs.features(models.pca)[keep]
    labels, _ = models.interaction.predict(X)
    lats = obs.lateralities()
    return [Decision(int(obs.frame_index[i]), lats[i], bool(lab), float(obs.confidence[i]))
            for i, lab in zip(keep, labels)]


def timelines_from(obs: ObservationSet, models: Models, cfg: PipelineConfig) -> InferResult:
    raw = assign_detections(decisions_for(obs, models), obs.n_frames, obs.fps)
    final = {lat: finalize(tl, cfg) for lat, tl in raw.items()}
    mets = {lat: metrics(tl) for lat, tl in final.items()} if obs.n_frames else {}
    report = {
        "frames": obs.n_frames,
        "detections": obs.n_detections,
        "verified": obs.n_verified,
        "segmented": int(len(obs)),
        "valid_features": int(obs.valid.sum()),
        "observations_per_hand": {lat.value: int(np.sum(obs.laterality == LAT_CODES[lat])) for lat in Laterality},
        "missing_frames_per_hand": {lat.value: int(np.sum(tl.states < 0)) for lat, tl in raw.items()},
    }
    return InferResult(raw, final, mets, report)


def run_infer(frames: Sequence[FrameImage], detections: Sequence[DetectionRecord], models: Models,
              cfg: PipelineConfig | None = None, jobs: int = 1, debug_dir: str | Path | None = None) -> InferResult:
    """Frames and detections to smoothed per-hand timelines and metrics."""
    cfg = cfg or PipelineConfig()
    if models.pca is None or models.interaction is None:
        raise ModelError("inference needs the PCA and interaction models")
    t0 = time.perf_counter()
    obs = extract_observations(frames, detections, models, cfg, jobs, debug_dir)
    res = timelines_from(obs, models, cfg)
    res.report["seconds"] = round(time.perf_counter() - t0, 3)
    return res


def write_infer_outputs(res: InferResult, out_dir: str | Path, fps: float, include_other: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_timelines_csv(out / "timelines_raw.csv", res.raw, fps)
    write_timelines_csv(out / "timelines.csv", res.final, fps)
    per_hand = {lat: m for lat, m in res.metrics.items() if include_other or lat != Laterality.OTHER}
    write_metrics_json(out / "metrics.json", per_hand)
    report = dict(res.report)
    report.pop("seconds", None)  # keep the report byte-stable across reruns
    if not include_other and Laterality.OTHER in res.metrics:
        report["other_metrics"] = res.metrics[Laterality.OTHER].to_dict()
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


# -- leave-one-subject-out ---------------------------------------------------

@dataclass
class SubjectData:
    subject_id: str
    obs: ObservationSet
    labels: dict


def truth_timelines(labels: dict, n_frames: int, fps: float) -> dict[Laterality, Timeline]:
    return {lat: Timeline(lat, fps, label_states(labels, lat, n_frames)) for lat in Laterality}


def loso_evaluate(data: Sequence[SubjectData], cfg: PipelineConfig, seed: int | None = None,
                  hands: Sequence[Laterality] = HANDS) -> dict:
    """Train PCA and forest without each subject in turn, infer on it and score.

    Frame scores compare the prolonged prediction (before smoothing) with the
    labels, over labelled frames.  Metric pairs compare predicted and labelled
    timelines after the same prolong/smooth/binarise treatment.
    """
    ids = [d.subject_id for d in data]
    per_subject, scatter = [], []
    pooled = {lat: ConfusionCounts(0, 0, 0, 0) for lat in hands}
    for held in ids:
        train_idx, test_idx = loso_split_indices(ids, held)
        train = [data[i] for i in train_idx]
        test = data[int(test_idx[0])]
        pca = fit_pca_on([d.obs for d in train], cfg, seed)
        samples = [s for d in train for s in labelled_samples(d.obs, d.labels, d.subject_id, pca)]
        model = fit_interaction(samples, cfg, seed)
        res = timelines_from(test.obs, Models(verifier=None, pca=pca, interaction=model), cfg)
        truth = truth_timelines(test.labels, test.obs.n_frames, test.obs.fps)
        for lat in hands:
            t_states = truth[lat].states
            labelled = t_states >= 0
            if not labelled.any():
                continue
            pred = prolong(res.raw[lat], cfg).states
            c = confusion(pred[labelled], t_states[labelled])
            pooled[lat] = pooled[lat] + c
            t_final = finalize(truth[lat], cfg)
            c_s = confusion(res.final[lat].states[labelled], t_final.states[labelled])
            per_subject.append({"subject_id": held, "laterality": lat.value, "f1": c.f1, "accuracy": c.accuracy,
                                "smoothed_f1": c_s.f1, "smoothed_accuracy": c_s.accuracy,
                                "frames": int(labelled.sum())})
            m_pred, m_true = res.metrics[lat].to_dict(), metrics(t_final).to_dict()
            for name in ("interaction_fraction", "mean_duration_s", "interactions_per_hour"):
                scatter.append({"subject_id": held, "laterality": lat.value, "metric": name,
                                "predicted": m_pred[name], "actual": m_true[name]})
    corr = {}
    for name in ("interaction_fraction", "mean_duration_s", "interactions_per_hour"):
        rows = [r for r in scatter if r["metric"] == name]
        if len(rows) >= 3:
            corr[name] = correlations([r["predicted"] for r in rows], [r["actual"] for r in rows]).to_dict()
    summary = {}
    for lat in hands:
        rows = [r for r in per_subject if r["laterality"] == lat.value]
        if rows:
            summary[lat.value] = {
                "pooled_f1": pooled[lat].f1, "pooled_accuracy": pooled[lat].accuracy,
                "f1_mean": float(np.mean([r["f1"] for r in rows])), "f1_std": float(np.std([r["f1"] for r in rows])),
                "accuracy_mean": float(np.mean([r["accuracy"] for r in rows])),
                "accuracy_std": float(np.std([r["accuracy"] for r in rows])),
            }
    return {"per_subject": per_subject, "summary": summary, "correlations": corr, "scatter": scatter}


def assembled_samples(data: Sequence[SubjectData], cfg: PipelineConfig, seed: int | None = None
                      ) -> list[LabelledSample]:
    """122-value labelled samples of every subject, with one PCA fitted on all of them."""
    pca = fit_pca_on([d.obs for d in data], cfg, seed)
    return _dedupe([s for d in data for s in labelled_samples(d.obs, d.labels, d.subject_id, pca)])


def load_subject(entry, models: Models, cfg: PipelineConfig, jobs: int = 1, cache_dir: Path | None = None,
                 debug_dir: Path | None = None) -> SubjectData:
    if entry.labels is None:
        raise DataError(f"subject {entry.subject_id} has no labels file")
    cache = cache_dir / f"{entry.subject_id}.obs.npz" if cache_dir is not None else None
    dd = debug_dir / entry.subject_id if debug_dir is not None else None
    obs = observe_recording(entry.frames, entry.detections, models, cfg, jobs, cache, dd)
    return SubjectData(entry.subject_id, obs, ingest_labels(entry.labels))
