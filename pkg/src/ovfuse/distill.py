"""Distil a per-point feature model from fused 2D features.

The student is a small perceptron on sinusoidal encodings of the point
coordinates.  It is trained with cosine distillation at point and superpoint
level, then additionally with cross-entropy against pseudo labels read off an
exponential moving average of its own past outputs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NoValidPoints, ShapeMismatch, Uninitialized
from .fusion import INVALID, ClassEmbeddings, similarity_argmax
from .geometry import PointFeatureSet
from .superpoint import SuperpointPartition, superpoint_broadcast, superpoint_pool
from .tensor import read_tensor, write_tensor

EPS = 1e-12


# --- student model ----------------------------------------------------------

def positional_encoding(xyz, n_freqs: int = 8) -> np.ndarray:
    """[N, 3] -> [N, 6 * n_freqs]: per axis, sin then cos at frequencies pi * 2^k."""
    xyz = np.asarray(xyz, dtype=np.float64)
    freqs = np.pi * 2.0 ** np.arange(n_freqs)
    ang = xyz[:, :, None] * freqs  # [N, 3, F]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=2).reshape(len(xyz), -1)


@dataclass
class ToyPointModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    center: np.ndarray
    scale: float
    n_freqs: int = 8

    @classmethod
    def init(cls, points, out_channels: int, hidden: int = 64, n_freqs: int = 8, seed: int = 0) -> "ToyPointModel":
        points = np.asarray(points, dtype=np.float64)
        lo, hi = points.min(axis=0), points.max(axis=0)
        center = (lo + hi) / 2
        scale = float(max((hi - lo).max() / 2, EPS))
        rng = np.random.default_rng(seed)
        d_in = 6 * n_freqs
        return cls(
            w1=rng.normal(0.0, np.sqrt(2.0 / d_in), (d_in, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, np.sqrt(1.0 / hidden), (hidden, out_channels)),
            b2=np.zeros(out_channels),
            center=center, scale=scale, n_freqs=n_freqs,
        )

    @property
    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def encode(self, points) -> np.ndarray:
        return positional_encoding((np.asarray(points, dtype=np.float64) - self.center) / self.scale, self.n_freqs)

    def forward(self, points=None, enc=None):
        """Unit-norm output rows plus the cache ``backward`` needs."""
        if enc is None:
            enc = self.encode(points)
        pre = enc @ self.w1 + self.b1
        h = np.maximum(pre, 0.0)
        z = h @ self.w2 + self.b2
        norm = np.sqrt(np.einsum("ij,ij->i", z, z))
        out = z / np.maximum(norm, EPS)[:, None]
        return out, (enc, pre, h, out, norm)

    def __call__(self, points) -> np.ndarray:
        return self.forward(points)[0]

    def backward(self, grad_out, cache) -> dict:
        enc, pre, h, out, norm = cache
        # through row normalisation
        gz = (grad_out - out * np.einsum("ij,ij->i", grad_out, out)[:, None]) / np.maximum(norm, EPS)[:, None]
        gh = gz @ self.w2.T
        gpre = gh * (pre > 0)
        return {"w1": enc.T @ gpre, "b1": gpre.sum(axis=0), "w2": h.T @ gz, "b2": gz.sum(axis=0)}

    def step(self, grads: dict, lr: float) -> None:
        for name, g in grads.items():
            setattr(self, name, getattr(self, name) - lr * g)

    def save(self, directory, extra: dict | None = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, value in self.params.items():
            write_tensor(value, d / f"{name}.ovt")
        meta = {
            "input_dim": int(self.w1.shape[0]),
            "hidden": int(self.w1.shape[1]),
            "out_channels": int(self.w2.shape[1]),
            "n_freqs": self.n_freqs,
            "center": [float(c) for c in self.center],
            "scale": self.scale,
        }
        meta.update(extra or {})
        (d / "model.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, directory) -> "ToyPointModel":
        d = Path(directory)
        meta = json.loads((d / "model.json").read_text())
        p = {name: read_tensor(d / f"{name}.ovt").astype(np.float64) for name in ("w1", "b1", "w2", "b2")}
        return cls(**p, center=np.asarray(meta["center"]), scale=float(meta["scale"]), n_freqs=int(meta["n_freqs"]))


# --- pooling with gradients ---------------------------------------------------

def pool_rows(f, part: SuperpointPartition):
    """Normalised segment means of every row (all rows count); returns pooled and a cache."""
    a = part.assignment
    inside = a >= 0
    sums = np.zeros((part.n_segments, f.shape[1]))
    np.add.at(sums, a[inside], f[inside])
    counts = np.maximum(np.bincount(a[inside], minlength=part.n_segments), 1)
    means = sums / counts[:, None]
    norm = np.sqrt(np.einsum("ij,ij->i", means, means))
    pooled = means / np.maximum(norm, EPS)[:, None]
    return pooled, (pooled, norm, counts)


def pool_rows_backward(grad_pooled, cache, part: SuperpointPartition):
    pooled, norm, counts = cache
    gm = (grad_pooled - pooled * np.einsum("ij,ij->i", grad_pooled, pooled)[:, None]) / np.maximum(norm, EPS)[:, None]
    gm /= counts[:, None]
    a = part.assignment
    grad = np.zeros((len(a), grad_pooled.shape[1]))
    inside = a >= 0
    grad[inside] = gm[a[inside]]
    return grad


# --- losses -------------------------------------------------------------------

def cosine_term(pred, target, valid=None):
    """Mean of ``1 - cos(pred_i, target_i)`` over valid rows, and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    if valid is None:
        valid = np.ones(len(pred), dtype=bool)
    n = int(np.count_nonzero(valid))
    grad = np.zeros_like(pred)
    if n == 0:
        return 0.0, grad
    p, t = pred[valid], target[valid]
    pn = np.maximum(np.sqrt(np.einsum("ij,ij->i", p, p)), EPS)
    tn = np.maximum(np.sqrt(np.einsum("ij,ij->i", t, t)), EPS)
    cos = np.einsum("ij,ij->i", p, t) / (pn * tn)
    loss = float(np.mean(1.0 - cos))
    grad[valid] = -(t / tn[:, None] - cos[:, None] * p / pn[:, None]) / pn[:, None] / n
    return loss, grad


def cosine_distill_loss(f3d, target, pooled3d, pooled_target, pooled_valid=None):
    """Point-level plus superpoint-level cosine distillation.

    ``target`` is the per-point teacher (a ``PointFeatureSet``, normally the
    broadcast of the pooled teacher); rows it marks invalid are skipped.
    Superpoint rows are skipped where ``pooled_valid`` is false (default: where
    the pooled teacher row is zero).  Returns ``(loss, grad_f3d, grad_pooled3d)``.
    """
    if not isinstance(target, PointFeatureSet):
        target = PointFeatureSet.from_features(target)
    f3d = np.asarray(f3d, dtype=np.float64)
    pooled_target = np.asarray(pooled_target, dtype=np.float64)
    if pooled_valid is None:
        pooled_valid = np.einsum("ij,ij->i", pooled_target, pooled_target) > EPS
    if not np.any(target.valid):
        raise NoValidPoints("no point has a valid distillation target")
    lp, gf = cosine_term(f3d, target.features, target.valid)
    lsp, gp = cosine_term(pooled3d, pooled_target, pooled_valid)
    return lp + lsp, gf, gp


def cross_entropy_term(features, vectors, labels, tau_ce: float):
    """Mean softmax cross-entropy of ``features . vectors^T / tau_ce`` against ``labels``.

    Rows labelled ``INVALID`` are skipped.  Returns ``(loss, grad_features)``.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    keep = labels != INVALID
    n = int(np.count_nonzero(keep))
    grad = np.zeros_like(features)
    if n == 0:
        return 0.0, grad
    logits = features[keep] @ vectors.T / tau_ce
    logits -= logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1))
    y = labels[keep]
    loss = float(np.mean(logz - logits[np.arange(n), y]))
    prob = np.exp(logits - logz[:, None])
    prob[np.arange(n), y] -= 1.0
    grad[keep] = prob @ vectors / (tau_ce * n)
    return loss, grad


def self_distill_loss(f3d, pooled3d, emb: ClassEmbeddings, point_pseudo, sp_pseudo, tau_ce: float = 0.07):
    """Cross-entropy against pseudo labels at point and superpoint level.

    Returns ``(loss, grad_f3d, grad_pooled3d)``.
    """
    vecs = emb.vectors if isinstance(emb, ClassEmbeddings) else np.asarray(emb, dtype=np.float64)
    lp, gf = cross_entropy_term(f3d, vecs, point_pseudo, tau_ce)
    lsp, gp = cross_entropy_term(pooled3d, vecs, sp_pseudo, tau_ce)
    return lp + lsp, gf, gp


# --- temporal ensembling ------------------------------------------------------

@dataclass(frozen=True)
class EmaBuffer:
    alpha: float = 0.9
    values: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def initialized(self) -> bool:
        return self.values is not None


def ema_update(buf: EmaBuffer, current) -> EmaBuffer:
    """``alpha * buffer + (1 - alpha) * current``; the first update copies ``current``."""
    current = np.array(current, dtype=np.float64)
    if not buf.initialized:
        return EmaBuffer(buf.alpha, current)
    if buf.values.shape != current.shape:
        raise ShapeMismatch(f"buffer {buf.values.shape} vs current {current.shape}")
    return EmaBuffer(buf.alpha, buf.alpha * buf.values + (1.0 - buf.alpha) * current)


def pseudo_labels(buf: EmaBuffer, part: SuperpointPartition, emb: ClassEmbeddings):
    """Point and superpoint pseudo labels from the buffered features."""
    if not buf.initialized:
        raise Uninitialized("EMA buffer has not been updated yet")
    point = similarity_argmax(buf.values, emb.vectors)
    pooled, seg_valid = superpoint_pool(buf.values, part)
    sp = np.full(part.n_segments, INVALID, dtype=np.int64)
    sp[seg_valid] = similarity_argmax(pooled[seg_valid], emb.vectors)
    return point, sp


# --- training -------------------------------------------------------------------

@dataclass
class TrainSchedule:
    total_epochs: int = 100
    phase1_epochs: int = 70
    lr: float = 5.0
    lr_final_ratio: float = 0.1
    steps_per_epoch: int = 10
    alpha: float = 0.9
    tau_ce: float = 0.07
    hidden: int = 64
    n_freqs: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.total_epochs < 0 or not 0 <= self.phase1_epochs <= self.total_epochs:
            raise ValueError("need 0 <= phase1_epochs <= total_epochs")
        if self.lr <= 0 or self.lr_final_ratio < 0 or self.steps_per_epoch < 1:
            raise ValueError("lr must be positive, lr_final_ratio >= 0, steps_per_epoch >= 1")
        if not 0 <= self.alpha <= 1 or self.tau_ce <= 0 or self.hidden < 1:
            raise ValueError("alpha in [0, 1], tau_ce > 0 and hidden >= 1 required")

    def learning_rate(self, epoch: int) -> float:
        """Linear decay from ``lr`` to ``lr * lr_final_ratio`` over the run."""
        if self.total_epochs <= 1:
            return self.lr
        frac = epoch / (self.total_epochs - 1)
        return self.lr * (1.0 - frac * (1.0 - self.lr_final_ratio))


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)

    def append(self, **row):
        self.epochs.append(row)

    def __len__(self):
        return len(self.epochs)

    def column(self, key):
        return [row[key] for row in self.epochs]

    def to_json(self) -> list:
        return list(self.epochs)


def distill_targets(fused: PointFeatureSet, part: SuperpointPartition):
    """Teacher rows: broadcast superpoint means per point, and the pooled rows themselves."""
    pooled, seg_valid = superpoint_pool(fused, part)
    return superpoint_broadcast(pooled, part, seg_valid), pooled, seg_valid


def train(points, fused_targets: PointFeatureSet, part: SuperpointPartition, emb: ClassEmbeddings,
          sched: TrainSchedule | None = None, model: ToyPointModel | None = None):
    """Two-phase distillation; returns ``(model, TrainLog)``.

    Epochs before ``phase1_epochs`` minimise the cosine distillation loss only;
    later epochs add self-distillation against pseudo labels refreshed from
    the EMA buffer, which is updated with each epoch's forward pass.
    """
    sched = sched or TrainSchedule()
    points = np.asarray(points, dtype=np.float64)
    if len(points) != len(fused_targets) or len(points) != len(part):
        raise ShapeMismatch(f"{len(points)} points, {len(fused_targets)} targets, partition over {len(part)}")
    if fused_targets.channels != emb.channels:
        raise ShapeMismatch(f"targets have {fused_targets.channels} channels, classes {emb.channels}")
    if not np.any(fused_targets.valid):
        raise NoValidPoints("no point has a valid fused target")
    if model is None:
        model = ToyPointModel.init(points, fused_targets.channels, sched.hidden, sched.n_freqs, sched.seed)
    log = TrainLog()
    if sched.total_epochs == 0:
        return model, log

    point_target, pooled_target, seg_valid = distill_targets(fused_targets, part)
    enc = model.encode(points)
    buf = EmaBuffer(sched.alpha)

    for epoch in range(sched.total_epochs):
        lr = sched.learning_rate(epoch)
        phase = 1 if epoch < sched.phase1_epochs else 2
        out, cache = model.forward(enc=enc)
        buf = ema_update(buf, out)
        if phase == 2:
            point_pseudo, sp_pseudo = pseudo_labels(buf, part, emb)
        row = None
        for _ in range(sched.steps_per_epoch):
            if row is not None:
                out, cache = model.forward(enc=enc)
            pooled, pcache = pool_rows(out, part)
            l_dis, g_out, g_pool = cosine_distill_loss(out, point_target, pooled, pooled_target, seg_valid)
            l_self = 0.0
            if phase == 2:
                l_self, gs_out, gs_pool = self_distill_loss(out, pooled, emb, point_pseudo, sp_pseudo, sched.tau_ce)
                g_out = g_out + gs_out
                g_pool = g_pool + gs_pool
            if row is None:
                row = {"epoch": epoch, "phase": phase, "lr": lr, "loss": l_dis + l_self,
                       "distill": l_dis, "self_distill": l_self}
            g_out = g_out + pool_rows_backward(g_pool, pcache, part)
            model.step(model.backward(g_out, cache), lr)
        log.append(**row)
    return model, log


def schedule_dict(sched: TrainSchedule) -> dict:
    return asdict(sched)
