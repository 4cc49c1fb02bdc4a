"""Turn mask/label/caption output of a mask-style model into dense per-pixel features.

Captions come from an external captioner with the head noun marked by a byte
span.  The span is replaced by the model's predicted label, the resulting
caption is encoded by the shared text encoder (externally), and each mask's
embedding is painted back onto its pixels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmbeddingCountMismatch, InvalidSpan, ShapeMismatch
from .tensor import read_pgm, read_tensor


def caption_substitute(caption: str, noun_span, label: str) -> str:
    """Replace the UTF-8 byte range ``noun_span`` of ``caption`` with ``label``."""
    raw = caption.encode("utf-8")
    start, end = (int(x) for x in noun_span)
    if not (0 <= start < end <= len(raw)):
        raise InvalidSpan(f"span [{start}, {end}) invalid for caption of {len(raw)} bytes")
    try:
        raw[:start].decode("utf-8")
        raw[end:].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidSpan(f"span [{start}, {end}) splits a multi-byte character") from exc
    return (raw[:start] + label.encode("utf-8") + raw[end:]).decode("utf-8")


def last_token_span(caption: str):
    """Byte span of the final whitespace-delimited token; the fallback noun guess."""
    raw = caption.encode("utf-8")
    stripped = raw.rstrip()
    if not stripped:
        raise InvalidSpan("caption has no tokens")
    start = max(stripped.rfind(b" "), stripped.rfind(b"\t"), stripped.rfind(b"\n")) + 1
    return start, len(stripped)


def substitute_label(caption: str, label: str, noun_span=None) -> str:
    if noun_span is None:
        noun_span = last_token_span(caption)
    return caption_substitute(caption, noun_span, label)


@dataclass
class MaskLabelSet:
    masks: list
    labels: list
    captions: list = field(default_factory=list)
    noun_spans: list = field(default_factory=list)
    embeddings: np.ndarray | None = None

    def __post_init__(self):
        self.masks = [np.asarray(m, dtype=bool) for m in self.masks]
        if len(self.labels) != len(self.masks):
            raise ShapeMismatch(f"{len(self.masks)} masks but {len(self.labels)} labels")
        if self.captions and len(self.captions) != len(self.masks):
            raise ShapeMismatch(f"{len(self.masks)} masks but {len(self.captions)} captions")
        if self.captions and not self.noun_spans:
            self.noun_spans = [None] * len(self.captions)
        for cap, span in zip(self.captions, self.noun_spans):
            if span is not None:
                n = len(cap.encode("utf-8"))
                if not (0 <= span[0] < span[1] <= n):
                    raise InvalidSpan(f"span {span} invalid for caption {cap!r}")

    def substituted_captions(self) -> list:
        """Captions with their noun replaced by the predicted label."""
        return [substitute_label(c, l, s) for c, l, s in zip(self.captions, self.labels, self.noun_spans)]


def rasterize_mask_features(mask_set: MaskLabelSet, width: int, height: int, channels: int):
    """Paint each mask's embedding onto its pixels; later masks win on overlap.

    Returns ``(features [H, W, C], coverage [H, W] bool)``; uncovered pixels are zero.
    """
    emb = mask_set.embeddings
    if emb is None:
        raise EmbeddingCountMismatch("mask set carries no embeddings")
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] != len(mask_set.masks):
        raise EmbeddingCountMismatch(f"{len(mask_set.masks)} masks but embeddings of shape {emb.shape}")
    if emb.shape[1] != channels:
        raise EmbeddingCountMismatch(f"embeddings have {emb.shape[1]} channels, expected {channels}")
    owner = np.full((height, width), -1, dtype=np.int64)
    for j, m in enumerate(mask_set.masks):
        if m.shape != (height, width):
            raise ShapeMismatch(f"mask {j} has shape {m.shape}, expected {(height, width)}")
        owner[m] = j
    coverage = owner >= 0
    out = np.zeros((height, width, channels))
    out[coverage] = emb[owner[coverage]]
    return out, coverage


def load_mask_set(manifest_path) -> MaskLabelSet:
    """Manifest: ``{"embeddings": "x.ovt", "masks": [{"mask", "label", "caption", "noun_span"}]}``."""
    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    entries = meta["masks"]
    masks = [read_pgm(base / e["mask"]) for e in entries]
    labels = [e["label"] for e in entries]
    captions = [e.get("caption", e["label"]) for e in entries]
    spans = [tuple(e["noun_span"]) if e.get("noun_span") is not None else None for e in entries]
    emb = read_tensor(base / meta["embeddings"]) if meta.get("embeddings") else None
    if emb is not None and emb.ndim == 1 and emb.size == 0:
        emb = emb.reshape(0, 0)
    return MaskLabelSet(masks, labels, captions, spans, emb)
