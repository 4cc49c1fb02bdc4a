"""Capability-guided fusion of aligned point features from several 2D models."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ChannelMismatch, ShapeMismatch
from .geometry import PointFeatureSet
from .tensor import l2_normalize_rows, read_tensor

INVALID = -1


@dataclass
class ClassEmbeddings:
    names: list
    vectors: np.ndarray

    def __post_init__(self):
        self.names = list(self.names)
        vecs = np.asarray(self.vectors, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[0] != len(self.names):
            raise ShapeMismatch(f"{len(self.names)} names but vectors of shape {vecs.shape}")
        if len(self.names) < 2:
            raise ValueError("need at least two classes")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate class names")
        self.vectors, degenerate = l2_normalize_rows(vecs)
        if np.any(degenerate):
            raise ValueError("class embedding with zero norm")

    def __len__(self):
        return len(self.names)

    @property
    def channels(self) -> int:
        return self.vectors.shape[1]

    def index(self, name: str) -> int:
        return self.names.index(name)


def load_classes(path) -> ClassEmbeddings:
    """``{"names": [...], "embeddings": "emb.ovt"}`` or inline ``"vectors": [[...], ...]``."""
    path = Path(path)
    meta = json.loads(path.read_text())
    if "embeddings" in meta:
        vecs = read_tensor(path.parent / meta["embeddings"])
    else:
        vecs = np.asarray(meta["vectors"], dtype=np.float64)
    return ClassEmbeddings(meta["names"], vecs)


def _as_feature_set(f) -> PointFeatureSet:
    return f if isinstance(f, PointFeatureSet) else PointFeatureSet.from_features(f)


def similarity_argmax(features, vectors) -> np.ndarray:
    # np.argmax keeps the first maximum, which is the smallest-index tie rule
    return np.argmax(np.asarray(features) @ np.asarray(vectors).T, axis=1)


def point_predictions(f, emb: ClassEmbeddings) -> np.ndarray:
    """Class index of the most similar embedding per point; ``INVALID`` for unobserved points."""
    f = _as_feature_set(f)
    if f.channels != emb.channels:
        raise ChannelMismatch(f"features have {f.channels} channels, embeddings {emb.channels}")
    pred = np.full(len(f), INVALID, dtype=np.int64)
    if np.any(f.valid):
        pred[f.valid] = similarity_argmax(f.features[f.valid], emb.vectors)
    return pred


def fusion_confidences_multi(caps, preds) -> np.ndarray:
    """Confidence of every model at every point, shape [M, N].

    Model ``i``'s confidence is the mean of its capability scores over the
    distinct classes predicted at that point by the models that observe it.
    With two models this is ``(S_i[pred_a] + S_i[pred_b]) / 2``.  Entries for
    models that do not observe a point are NaN.
    """
    preds = [np.asarray(p, dtype=np.int64) for p in preds]
    if len(caps) != len(preds):
        raise ShapeMismatch(f"{len(caps)} capability tables for {len(preds)} prediction sets")
    n = len(preds[0])
    if any(len(p) != n for p in preds):
        raise ShapeMismatch("prediction arrays differ in length")
    m = len(preds)
    # distinct[j] marks model j's prediction as the first occurrence of its class at that point
    distinct = []
    for j, pj in enumerate(preds):
        first = pj != INVALID
        for q in range(j):
            first &= pj != preds[q]
        distinct.append(first)
    n_distinct = np.sum(distinct, axis=0)

    conf = np.full((m, n), np.nan)
    for i, cap in enumerate(caps):
        total = np.zeros(n)
        for j, pj in enumerate(preds):
            sel = distinct[j]
            total[sel] += cap.lookup(pj[sel])
        observed = preds[i] != INVALID
        conf[i, observed] = total[observed] / n_distinct[observed]
    return conf


def fusion_confidences(capA, capB, predA, predB):
    """Two-model form; returns ``(confA, confB)``."""
    conf = fusion_confidences_multi([capA, capB], [predA, predB])
    return conf[0], conf[1]


def fusion_weights(confs, tau: float) -> np.ndarray:
    """Softmax of ``conf / tau`` over the models observing each point; NaN entries get weight 0."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    confs = np.asarray(confs, dtype=np.float64)
    observed = ~np.isnan(confs)
    logits = np.where(observed, confs / tau, -np.inf)
    top = logits.max(axis=0)
    top = np.where(np.isfinite(top), top, 0.0)
    w = np.where(observed, np.exp(logits - top), 0.0)
    total = w.sum(axis=0)
    return np.divide(w, total, out=np.zeros_like(w), where=total > 0)


@dataclass
class FusionConfig:
    tau: float = 0.1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def fuse_features_multi(feature_sets, confs, cfg: FusionConfig | None = None) -> PointFeatureSet:
    cfg = cfg or FusionConfig()
    sets = [_as_feature_set(f) for f in feature_sets]
    shapes = {f.features.shape for f in sets}
    if len(shapes) != 1:
        raise ShapeMismatch(f"feature sets differ in shape: {sorted(shapes)}")
    confs = np.array(confs, dtype=np.float64)
    if confs.shape != (len(sets), len(sets[0])):
        raise ShapeMismatch(f"confidences {confs.shape} vs {len(sets)} models x {len(sets[0])} points")
    for i, f in enumerate(sets):
        confs[i, ~f.valid] = np.nan
    w = fusion_weights(confs, cfg.tau)
    mixed = np.zeros_like(sets[0].features)
    for i, f in enumerate(sets):
        mixed += w[i][:, None] * f.features
    valid = np.any([f.valid for f in sets], axis=0)
    out, degenerate = l2_normalize_rows(mixed)
    valid &= ~degenerate
    out[~valid] = 0.0
    return PointFeatureSet(out, valid, np.sum([f.view_count for f in sets], axis=0) * valid)


def fuse_features(fA, fB, confA, confB, cfg: FusionConfig | None = None) -> PointFeatureSet:
    return fuse_features_multi([fA, fB], [confA, confB], cfg)


def capability_fuse(feature_sets, caps, emb: ClassEmbeddings, cfg: FusionConfig | None = None) -> PointFeatureSet:
    """Predict, score and fuse in one call."""
    sets = [_as_feature_set(f) for f in feature_sets]
    preds = [point_predictions(f, emb) for f in sets]
    confs = fusion_confidences_multi(caps, preds)
    return fuse_features_multi(sets, confs, cfg)


# Baselines for ablations ------------------------------------------------------

def fuse_add(feature_sets) -> PointFeatureSet:
    """Plain sum of the aligned features."""
    sets = [_as_feature_set(f) for f in feature_sets]
    out, degenerate = l2_normalize_rows(np.sum([f.features for f in sets], axis=0))
    valid = np.any([f.valid for f in sets], axis=0) & ~degenerate
    out[~valid] = 0.0
    return PointFeatureSet(out, valid)


def fuse_linear(feature_sets, emb: ClassEmbeddings) -> PointFeatureSet:
    """Each model weighted by its best text similarity at the point."""
    sets = [_as_feature_set(f) for f in feature_sets]
    weights = np.stack([np.where(f.valid, (f.features @ emb.vectors.T).max(axis=1), 0.0) for f in sets])
    weights = np.clip(weights, 0.0, None)
    total = weights.sum(axis=0)
    weights = np.divide(weights, total, out=np.zeros_like(weights), where=total > 0)
    mixed = sum(w[:, None] * f.features for w, f in zip(weights, sets))
    out, degenerate = l2_normalize_rows(mixed)
    valid = np.any([f.valid for f in sets], axis=0) & ~degenerate
    out[~valid] = 0.0
    return PointFeatureSet(out, valid)
