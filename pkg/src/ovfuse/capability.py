"""Per-class model capability tables estimated from synthesized images.

Cross-attention maps harvested from a text-to-image diffusion model localise
the prompted class; they are aggregated, binarised into a coarse mask and
turned into point prompts for a promptable segmenter, whose output serves as
the pseudo ground truth.  A model's capability for a class is its mean mask
IoU against those pseudo masks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AbsentClassScore, EmptyMask, ShapeMismatch, ZeroMap
from .tensor import read_pgm

SYNTHESIS_TEMPLATE = "a good photo of {}"


def synthesis_prompt(name: str) -> str:
    return SYNTHESIS_TEMPLATE.format(name)


def aggregate_attention(stack) -> np.ndarray:
    """Mean over layers and steps of each map divided by its own maximum.

    ``stack`` has shape [Y, Z, h, w].
    """
    maps = np.asarray(stack, dtype=np.float64)
    if maps.ndim != 4 or maps.shape[0] < 1 or maps.shape[1] < 1:
        raise ShapeMismatch(f"attention stack must be [Y>=1, Z>=1, h, w], got {maps.shape}")
    if np.any(maps < 0):
        raise ValueError("attention maps must be non-negative")
    peak = maps.max(axis=(2, 3), keepdims=True)
    if np.any(peak <= 0):
        y, z = np.argwhere(peak[..., 0, 0] <= 0)[0]
        raise ZeroMap(f"attention map at layer {y}, step {z} is identically zero")
    return (maps / peak).mean(axis=(0, 1))


def binarize_coarse_mask(m, threshold: float = 0.5) -> np.ndarray:
    """Pixels at or above ``threshold`` times the map maximum."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    m = np.asarray(m, dtype=np.float64)
    return m >= threshold * m.max()


def sample_prompt_points(mask, k: int = 3, seed: int = 0) -> np.ndarray:
    """Farthest-point sample ``k`` pixels (row, col) inside ``mask``.

    The first pixel is the one nearest the mask centroid (row-major order on
    ties); later ties between equally distant candidates are broken by the
    seeded generator.
    """
    mask = np.asarray(mask, dtype=bool)
    pix = np.argwhere(mask)
    if len(pix) == 0:
        raise EmptyMask("cannot sample prompt points from an empty mask")
    if k < 1:
        return np.zeros((0, 2), dtype=np.int64)
    rng = np.random.default_rng(seed)
    pf = pix.astype(np.float64)
    centroid = pf.mean(axis=0)
    first = int(np.argmin(((pf - centroid) ** 2).sum(axis=1)))
    chosen = [first]
    d2 = ((pf - pf[first]) ** 2).sum(axis=1)
    for _ in range(min(k, len(pix)) - 1):
        best = np.flatnonzero(d2 == d2.max())
        nxt = int(best[0] if len(best) == 1 else rng.choice(best))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((pf - pf[nxt]) ** 2).sum(axis=1))
    return pix[chosen].astype(np.int64)


def mask_iou(a, b) -> float:
    """Foreground IoU of two binary masks; two empty masks score 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


@dataclass
class CapabilityTable:
    model_id: str
    class_names: list
    scores: np.ndarray  # NaN where absent
    sample_counts: np.ndarray

    def __post_init__(self):
        self.class_names = list(self.class_names)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.sample_counts = np.asarray(self.sample_counts, dtype=np.int64)
        k = len(self.class_names)
        if self.scores.shape != (k,) or self.sample_counts.shape != (k,):
            raise ShapeMismatch(f"{k} classes, scores {self.scores.shape}, counts {self.sample_counts.shape}")
        self.scores[self.sample_counts == 0] = np.nan
        present = self.sample_counts > 0
        if np.any((self.scores[present] < 0) | (self.scores[present] > 1)):
            raise ValueError("capability scores must lie in [0, 1]")

    @property
    def present(self) -> np.ndarray:
        return self.sample_counts > 0

    def score(self, j: int) -> float:
        if not self.present[j]:
            raise AbsentClassScore(f"model {self.model_id!r} has no samples for class {self.class_names[j]!r}")
        return float(self.scores[j])

    def lookup(self, classes) -> np.ndarray:
        """Vectorised ``score``; raises if any requested class is absent."""
        classes = np.asarray(classes, dtype=np.int64)
        absent = ~self.present[classes]
        if np.any(absent):
            j = int(classes[absent][0])
            raise AbsentClassScore(f"model {self.model_id!r} has no samples for class {self.class_names[j]!r}")
        return self.scores[classes]

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "scores": {n: (None if c == 0 else float(s))
                       for n, s, c in zip(self.class_names, self.scores, self.sample_counts)},
            "sample_counts": {n: int(c) for n, c in zip(self.class_names, self.sample_counts)},
        }

    @classmethod
    def from_json(cls, data: dict, class_names=None) -> "CapabilityTable":
        names = list(class_names) if class_names is not None else list(data["scores"])
        counts_in = data.get("sample_counts", {})
        scores, counts = [], []
        for n in names:
            s = data["scores"].get(n)
            c = int(counts_in.get(n, 0 if s is None else 1))
            scores.append(np.nan if s is None else float(s))
            counts.append(c if s is not None else 0)
        return cls(data["model_id"], names, scores, counts)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n")

    @classmethod
    def load(cls, path, class_names=None) -> "CapabilityTable":
        return cls.from_json(json.loads(Path(path).read_text()), class_names)


def build_capability(model_id: str, per_class_mask_pairs, class_names=None) -> CapabilityTable:
    """Mean pseudo-vs-model mask IoU per class.

    ``per_class_mask_pairs`` is either a sequence indexed by class or a mapping
    from class name to a list of ``(pseudo_mask, model_mask)`` pairs.  Classes
    without pairs are marked absent.
    """
    if isinstance(per_class_mask_pairs, dict):
        names = list(class_names) if class_names is not None else list(per_class_mask_pairs)
        groups = [per_class_mask_pairs.get(n, []) for n in names]
    else:
        groups = list(per_class_mask_pairs)
        names = list(class_names) if class_names is not None else [str(j) for j in range(len(groups))]
        if len(names) != len(groups):
            raise ShapeMismatch(f"{len(groups)} classes of pairs but {len(names)} names")
    scores = np.full(len(groups), np.nan)
    counts = np.zeros(len(groups), dtype=np.int64)
    for j, pairs in enumerate(groups):
        ious = [mask_iou(p, m) for p, m in pairs]
        if ious:
            scores[j] = float(np.mean(ious))
            counts[j] = len(ious)
    return CapabilityTable(model_id, names, scores, counts)


def load_capability_corpus(manifest_path) -> dict:
    """Read ``{model_id: {class_name: [{"pseudo_mask", "model_mask"}, ...]}}`` with masks loaded."""
    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    out = {}
    for model_id, classes in meta.items():
        out[model_id] = {
            name: [(read_pgm(base / e["pseudo_mask"]), read_pgm(base / e["model_mask"])) for e in entries]
            for name, entries in classes.items()
        }
    return out
