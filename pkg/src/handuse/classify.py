"""Random forest for binary decisions (interaction vs. none, hand vs. not-hand).

Trees are grown on bootstrap resamples with Gini splits over sqrt(d) randomly
chosen features per node, without depth limit.  Each tree draws from its own
generator keyed by ``(seed, tree_index)`` so the result does not depend on
the order trees are built in.

Model file layout (all little-endian)::

    magic      4s   b"HRF1"
    version    u32  1
    n_trees    u32
    n_features u32
    n_classes  u32  (always 2)
    seed       i64
    n_samples  u64
    per tree:
      n_nodes    u32
      feature    i32[n_nodes]   -1 marks a leaf
      threshold  f64[n_nodes]   go left when x[feature] <= threshold
      left       i32[n_nodes]   child node index, -1 at leaves
      right      i32[n_nodes]
      counts     u32[n_nodes*2] bootstrap class counts (class 0, class 1)
"""

from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DataError, Laterality, ModelError, PipelineConfig, rng_for

MAGIC = b"HRF1"
VERSION = 1


class Label(enum.IntEnum):
    NO_INTERACTION = 0
    INTERACTION = 1


@dataclass(frozen=True)
class LabelledSample:
    feature: np.ndarray
    label: Label
    subject_id: str = ""
    frame_index: int = 0
    laterality: Laterality = Laterality.OTHER

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.subject_id, self.frame_index, Laterality(self.laterality).value)


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 2)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_of(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.intp)
        active = self.feature[node] >= 0
        rows = np.arange(len(X))
        while active.any():
            n = node[active]
            f = self.feature[n]
            go_left = X[rows[active], f] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def votes(self, X: np.ndarray) -> np.ndarray:
        c = self.counts[self.leaf_of(X)]
        return (c[:, 1] > c[:, 0]).astype(np.int64)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[Tree, ...]
    feature_dim: int
    seed: int = 0
    n_samples: int = 0

    def __post_init__(self):
        for t in self.trees:
            if np.any(t.feature >= self.feature_dim):
                raise ModelError("split feature index out of range")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def vote_fraction(self, X: np.ndarray) -> np.ndarray:
        X = _check_matrix(X, self.feature_dim)
        if not self.trees:
            raise ModelError("forest has no trees; train it first")
        total = np.zeros(len(X), dtype=np.int64)
        for t in self.trees:
            total += t.votes(X)
        return total / self.n_trees

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        frac = self.vote_fraction(X)
        # an exact tie is NoInteraction
        return (frac > 0.5).astype(np.int64), frac

    # -- persistence ----------------------------------------------------------
    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<IIIIqQ", VERSION, self.n_trees, self.feature_dim, 2,
                              self.seed, self.n_samples))
        for t in self.trees:
            buf.write(struct.pack("<I", t.n_nodes))
            buf.write(t.feature.astype("<i4").tobytes())
            buf.write(t.threshold.astype("<f8").tobytes())
            buf.write(t.left.astype("<i4").tobytes())
            buf.write(t.right.astype("<i4").tobytes())
            buf.write(t.counts.astype("<u4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ForestModel":
        if raw[:4] != MAGIC:
            raise ModelError("not a forest model file")
        head = struct.calcsize("<IIIIqQ")
        version, n_trees, dim, n_classes, seed, n_samples = struct.unpack_from("<IIIIqQ", raw, 4)
        if version != VERSION or n_classes != 2:
            raise ModelError(f"unsupported forest model version {version}")
        off = 4 + head
        trees = []
        for _ in range(n_trees):
            (n,) = struct.unpack_from("<I", raw, off)
            off += 4

            def take(dtype, count):
                nonlocal off
                arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
                off += arr.nbytes
                return arr

            feature = take("<i4", n).astype(np.int64)
            threshold = take("<f8", n).astype(np.float64)
            left = take("<i4", n).astype(np.int64)
            right = take("<i4", n).astype(np.int64)
            counts = take("<u4", 2 * n).astype(np.int64).reshape(n, 2)
            trees.append(Tree(feature, threshold, left, right, counts))
        if off != len(raw):
            raise ModelError("trailing bytes in forest model file")
        return cls(tuple(trees), dim, seed, n_samples)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ForestModel":
        p = Path(path)
        if not p.exists():
            raise ModelError(f"model file not found: {p}")
        return cls.from_bytes(p.read_bytes())


def _check_matrix(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise DataError(f"expected feature length {dim}, got {X.shape[-1]}")
    return X


def _n_candidate_features(spec, d: int) -> int:
    if spec == "sqrt":
        return max(1, int(math.sqrt(d)))
    if spec == "log2":
        return max(1, int(math.log2(d)))
    if spec == "all":
        return d
    return min(int(spec), d)


def _best_split(Xn: np.ndarray, yn: np.ndarray, feats: np.ndarray):
    """Lowest weighted Gini over thresholds of ``feats``; None when no feature varies."""
    n = len(yn)
    vals = Xn[:, feats]
    order = np.argsort(vals, axis=0, kind="stable")
    sv = np.take_along_axis(vals, order, axis=0)
    sy = yn[order]
    ones_left = np.cumsum(sy, axis=0)[:-1]  # left = first i+1 samples
    n_left = np.arange(1, n)[:, None].astype(np.float64)
    n_right = n - n_left
    ones_right = yn.sum() - ones_left
    p_l = ones_left / n_left
    p_r = ones_right / n_right
    # n * weighted gini = nL * 2pL(1-pL) + nR * 2pR(1-pR)
    cost = n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)
    valid = sv[1:] > sv[:-1]
    if not valid.any():
        return None
    cost = np.where(valid, cost, np.inf)
    # column-major flattening so ties prefer the earlier-drawn feature
    flat = int(np.argmin(cost.T))
    j, i = divmod(flat, n - 1)
    lo, hi = sv[i, j], sv[i + 1, j]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(feats[j]), float(thr), float(cost[i, j])


def build_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, max_features: int,
               min_samples_split: int = 2, max_depth: int | None = None,
               usable: np.ndarray | None = None) -> Tree:
    """Grow one tree on a bootstrap of (X, y); split candidates are drawn from ``usable`` columns."""
    n = len(X)
    usable = np.arange(X.shape[1]) if usable is None else np.asarray(usable)
    d = len(usable)
    boot = rng.integers(0, n, size=n)
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        ones = int(y[idx].sum())
        counts.append((len(idx) - ones, ones))
        return len(feature) - 1

    stack = [(new_node(boot), boot, 0)]
    while stack:
        node, idx, depth = stack.pop()
        c0, c1 = counts[node]
        if c0 == 0 or c1 == 0 or len(idx) < min_samples_split:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        perm = usable[rng.permutation(d)]
        Xn, yn = X[idx], y[idx]
        split = None
        # keep drawing past max_features only while nothing so far could split
        for start in range(0, d, max_features):
            split = _best_split(Xn, yn, perm[start:start + max_features])
            if split is not None:
                break
        if split is None:
            continue
        f, thr, _ = split
        go_left = Xn[:, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        lnode = new_node(li)
        rnode = new_node(ri)
        left[node], right[node] = lnode, rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))

    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(counts, dtype=np.int64).reshape(-1, 2))


def fit_arrays(X, y, cfg: PipelineConfig | None = None, seed: int | None = None,
               n_trees: int | None = None, class_names: Sequence[str] = ("NoInteraction", "Interaction"),
               ) -> ForestModel:
    """Train on a feature matrix and 0/1 labels in the given (canonical) row order."""
    cfg = cfg or PipelineConfig()
    seed = cfg.rng_seed if seed is None else seed
    n_trees = cfg.forest_trees if n_trees is None else n_trees
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError("feature matrix and labels disagree in length")
    if len(X) < 2:
        raise DataError("need at least 2 training samples")
    for cls, name in enumerate(class_names):
        if not np.any(y == cls):
            raise DataError(f"training set has no {name} samples")
    if np.any((y != 0) & (y != 1)):
        raise DataError("labels must be 0 or 1")
    # columns constant over the training set can never split, so they are left out of the draw
    usable = np.flatnonzero(X.max(axis=0) > X.min(axis=0))
    mf = _n_candidate_features(cfg.forest_max_features, max(1, len(usable)))
    trees = tuple(
        build_tree(X, y, rng_for(seed, t), mf, cfg.forest_min_samples_split, cfg.forest_max_depth, usable)
        for t in range(n_trees)
    )
    return ForestModel(trees, X.shape[1], int(seed), len(X))


def canonical_order(samples: Sequence[LabelledSample]) -> list[LabelledSample]:
    return sorted(samples, key=lambda s: s.key)


def forest_fit(samples: Iterable[LabelledSample], cfg: PipelineConfig | None = None,
               seed: int | None = None) -> ForestModel:
    """Train the interaction forest.

    Samples are put in (subject, frame, laterality) order first, so the model
    does not depend on the order they were supplied in.
    """
    ordered = canonical_order(list(samples))
    if not ordered:
        raise DataError("no training samples")
    X = np.stack([np.asarray(s.feature, dtype=np.float64) for s in ordered])
    y = np.array([int(s.label) for s in ordered])
    return fit_arrays(X, y, cfg, seed)


def forest_predict(model: ForestModel, feature) -> tuple[Label, float]:
    labels, frac = model.predict(_check_matrix(feature, model.feature_dim))
    return Label(int(labels[0])), float(frac[0])


def feature_ablation_views(sample, flow_dim: int = 60, hog_dim: int = 60, colour_dim: int = 2):
    """Split an assembled feature into its (flow, hog, colour) parts."""
    v = np.asarray(getattr(sample, "feature", sample))
    if v.shape[-1] != flow_dim + hog_dim + colour_dim:
        raise DataError(f"expected a {flow_dim + hog_dim + colour_dim}-value feature, got {v.shape[-1]}")
    return (v[..., :flow_dim], v[..., flow_dim:flow_dim + hog_dim],
            v[..., flow_dim + hog_dim:])


FAMILY_SLICES = {"flow": slice(0, 60), "hog": slice(60, 120), "colour": slice(120, 122)}
