"""Frame scores, leave-one-subject-out splits, metric correlations and feature ablation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy import special

from .classify import FAMILY_SLICES, canonical_order, fit_arrays
from .core import DataError, PipelineConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0


def confusion(pred, truth) -> ConfusionCounts:
    p = np.asarray(getattr(pred, "states", pred))
    t = np.asarray(getattr(truth, "states", truth))
    if p.shape != t.shape:
        raise DataError(f"prediction and truth differ in length: {p.size} vs {t.size}")
    if np.any((p != 0) & (p != 1)) or np.any((t != 0) & (t != 1)):
        raise DataError("frame scores need binary sequences")
    p = p.astype(bool)
    t = t.astype(bool)
    return ConfusionCounts(int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & ~t)), int(np.sum(~p & t)))


def frame_scores(pred, truth) -> tuple[float, float, ConfusionCounts]:
    c = confusion(pred, truth)
    return c.f1, c.accuracy, c


# -- leave one subject out ---------------------------------------------------

def loso_split(samples: Sequence, held_out_subject: Hashable, all_subjects: Sequence | None = None,
               subject_of: Callable = lambda s: s.subject_id) -> tuple[list, list]:
    """Hold out every sample of one subject; ``all_subjects`` may name subjects with no samples."""
    train_idx, test_idx = loso_split_indices([subject_of(s) for s in samples], held_out_subject, all_subjects)
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


def loso_split_indices(subject_ids: Sequence, held_out_subject: Hashable,
                       all_subjects: Sequence | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Index form of ``loso_split``; ``all_subjects`` may list subjects that have no samples."""
    ids = np.asarray(subject_ids, dtype=object)
    known = set(all_subjects) if all_subjects is not None else set(ids.tolist())
    if held_out_subject not in known:
        raise DataError(f"unknown subject {held_out_subject!r}")
    if len(known) < 2:
        raise DataError("leave-one-subject-out needs at least two subjects")
    test = np.flatnonzero(ids == held_out_subject)
    train = np.flatnonzero(ids != held_out_subject)
    if len(test) == 0:
        log.warning("subject %r has no samples; its test set is empty", held_out_subject)
    return train, test


# -- correlations ------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationReport:
    n: int
    pearson_r: float | None
    pearson_p_one_tailed: float | None
    spearman_rho: float | None
    spearman_p_one_tailed: float | None
    defined: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def pearson(x, y) -> float | None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx <= 0 or syy <= 0:
        return None
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def midranks(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float | None:
    return pearson(midranks(x), midranks(y))


def t_sf(t: float, dof: int) -> float:
    """P(T > t) for Student's t with ``dof`` degrees of freedom."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * float(special.betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
    return tail if t >= 0 else 1.0 - tail


def one_tailed_p(r: float, n: int) -> float:
    """Right-tailed p-value for H0: no correlation."""
    dof = n - 2
    if r >= 1.0:
        return 0.0
    if r <= -1.0:
        return 1.0
    t = r * math.sqrt(dof / (1.0 - r * r))
    return min(1.0, max(0.0, t_sf(t, dof)))


def correlations(predicted, actual) -> CorrelationReport:
    x = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(actual, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("correlation inputs must be equal-length lists")
    n = len(x)
    if n < 3:
        raise DataError("correlation needs at least 3 pairs")
    r = pearson(x, y)
    rho = spearman(x, y)
    if r is None or rho is None:
        return CorrelationReport(n, None, None, None, None, defined=False)
    return CorrelationReport(n, r, one_tailed_p(r, n), rho, one_tailed_p(rho, n))


# -- leave-one-subject-out training and ablation -----------------------------

FAMILIES = ("flow", "hog", "colour", "all")


def _family_columns(family: str) -> slice:
    if family == "all":
        return slice(0, None)
    try:
        return FAMILY_SLICES[family]
    except KeyError:
        raise DataError(f"unknown feature family {family!r}; choose from {', '.join(FAMILIES)}") from None


def loso_predict(samples: Sequence, cfg=None, seed: int | None = None, family: str = "all",
                 all_subjects: Sequence | None = None) -> tuple[list, np.ndarray]:
    """Predict every sample with a forest trained on the other subjects.

    Returns the samples in canonical order with their predicted labels.
    """
    cfg = cfg or PipelineConfig()
    ordered = canonical_order(list(samples))
    if not ordered:
        raise DataError("no samples to evaluate")
    cols = _family_columns(family)
    X = np.stack([np.asarray(s.feature, dtype=np.float64) for s in ordered])[:, cols]
    y = np.array([int(s.label) for s in ordered])
    subjects = [s.subject_id for s in ordered]
    pred = np.full(len(ordered), -1, dtype=np.int64)
    for subject in sorted(set(all_subjects) if all_subjects is not None else set(subjects)):
        train, test = loso_split_indices(subjects, subject, all_subjects)
        if len(test) == 0:
            continue
        model = fit_arrays(X[train], y[train], cfg, seed)
        pred[test], _ = model.predict(X[test])
    return ordered, pred


@dataclass(frozen=True)
class SubjectScore:
    subject_id: str
    laterality: str
    f1: float
    accuracy: float
    n: int


def per_subject_scores(ordered: Sequence, pred: np.ndarray, by_hand: bool = False) -> list[SubjectScore]:
    """Frame-level f1/accuracy per subject (and per hand when ``by_hand``)."""
    groups: dict[tuple, list[int]] = {}
    for i, s in enumerate(ordered):
        hand = getattr(s.laterality, "value", s.laterality) if by_hand else "all"
        groups.setdefault((s.subject_id, hand), []).append(i)
    truth = np.array([int(s.label) for s in ordered])
    out = []
    for (subject, hand), idx in sorted(groups.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        f1, acc, _ = frame_scores(pred[idx], truth[idx])
        out.append(SubjectScore(str(subject), hand, f1, acc, len(idx)))
    return out


def ablation_run(samples: Sequence, family: str, cfg=None, seed: int | None = None) -> dict:
    """LOSO scores using only one feature family (or ``all``).

    Returns ``{"family", "feature_dim", "subjects": [...], "mean_f1", "mean_accuracy"}``.
    """
    cols = _family_columns(family)
    ordered, pred = loso_predict(samples, cfg, seed, family)
    dim = len(range(*cols.indices(len(np.asarray(ordered[0].feature)))))
    rows = per_subject_scores(ordered, pred)
    return {
        "family": family,
        "feature_dim": dim,
        "subjects": [asdict(r) for r in rows],
        "mean_f1": float(np.mean([r.f1 for r in rows])),
        "mean_accuracy": float(np.mean([r.accuracy for r in rows])),
    }


# -- reports -----------------------------------------------------------------

METRIC_NAMES = ("interaction_fraction", "mean_duration_s", "interactions_per_hour")


def write_evaluation_json(path, scores: Sequence[SubjectScore], correlation: dict | None = None,
                          extra: dict | None = None) -> None:
    doc = {"per_subject": [asdict(s) for s in scores]}
    for hand in sorted({s.laterality for s in scores}):
        sel = [s for s in scores if s.laterality == hand]
        doc.setdefault("summary", {})[hand] = {
            "f1_mean": float(np.mean([s.f1 for s in sel])),
            "f1_std": float(np.std([s.f1 for s in sel])),
            "accuracy_mean": float(np.mean([s.accuracy for s in sel])),
            "accuracy_std": float(np.std([s.accuracy for s in sel])),
        }
    if correlation:
        doc["correlations"] = correlation
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_scatter_csv(path, rows: Sequence[dict]) -> None:
    """Rows of subject_id, laterality, metric, predicted, actual."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["subject_id", "laterality", "metric", "predicted", "actual"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in w.fieldnames})


def metric_correlations(rows: Sequence[dict]) -> dict:
    """Correlation report per metric over (predicted, actual) scatter rows."""
    out = {}
    for name in METRIC_NAMES:
        sel = [r for r in rows if r["metric"] == name]
        if len(sel) < 3:
            continue
        out[name] = correlations([r["predicted"] for r in sel], [r["actual"] for r in sel]).to_dict()
    return out
