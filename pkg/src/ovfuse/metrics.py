"""Zero-shot classification of point features and segmentation metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ChannelMismatch, EmptyName, LabelOutOfRange
from .fusion import INVALID, ClassEmbeddings, point_predictions

PROMPT_TEMPLATE = "a {} in a scene"


def prompt_template(name: str) -> str:
    if not name:
        raise EmptyName("class name is empty")
    return PROMPT_TEMPLATE.format(name)


def _data_json(name: str):
    return json.loads(resources.files("ovfuse").joinpath("data", name).read_text())


def vocabulary(kind: str = "indoor") -> list:
    """Bundled class vocabularies used to build capability tables: ``indoor`` or ``outdoor``."""
    return list(_data_json(f"vocab_{kind}.json")["names"])


@dataclass
class LabelMap:
    fine_names: list
    mapping: np.ndarray
    coarse_names: list

    def __post_init__(self):
        self.fine_names = list(self.fine_names)
        self.coarse_names = list(self.coarse_names)
        self.mapping = np.asarray(self.mapping, dtype=np.int64)
        if self.mapping.shape != (len(self.fine_names),):
            raise ValueError(f"{len(self.fine_names)} fine classes but mapping of shape {self.mapping.shape}")
        if np.any((self.mapping < 0) | (self.mapping >= len(self.coarse_names))):
            raise ValueError("mapping must send every fine class to a coarse class")

    def coarse_of(self, fine_name: str) -> str:
        return self.coarse_names[self.mapping[self.fine_names.index(fine_name)]]

    def apply(self, fine_labels) -> np.ndarray:
        fine_labels = np.asarray(fine_labels, dtype=np.int64)
        out = np.full(fine_labels.shape, INVALID, dtype=np.int64)
        ok = fine_labels != INVALID
        out[ok] = self.mapping[fine_labels[ok]]
        return out

    @classmethod
    def identity(cls, names) -> "LabelMap":
        return cls(names, np.arange(len(names)), names)

    @classmethod
    def from_json(cls, data: dict) -> "LabelMap":
        if isinstance(data.get("mapping"), dict):
            coarse = list(data["coarse_names"])
            fine = list(data["mapping"])
            return cls(fine, [coarse.index(data["mapping"][f]) for f in fine], coarse)
        return cls(data["fine_names"], data["mapping"], data["coarse_names"])

    def to_json(self) -> dict:
        return {"coarse_names": self.coarse_names, "fine_names": self.fine_names,
                "mapping": [int(m) for m in self.mapping]}

    @classmethod
    def load(cls, path) -> "LabelMap":
        return cls.from_json(json.loads(Path(path).read_text()))


def nuscenes_label_map() -> LabelMap:
    """43 unambiguous names mapped onto the 16 nuScenes classes."""
    return LabelMap.from_json(_data_json("nuscenes_16.json"))


def classify_points(f, emb: ClassEmbeddings, label_map: LabelMap | None = None) -> np.ndarray:
    """Similarity argmax over ``emb`` (the fine classes), remapped to coarse labels if a map is given."""
    if label_map is not None and len(label_map.fine_names) != len(emb):
        raise ChannelMismatch(f"label map covers {len(label_map.fine_names)} classes, embeddings {len(emb)}")
    pred = point_predictions(f, emb)
    return label_map.apply(pred) if label_map is not None else pred


@dataclass
class SegmentationMetrics:
    counts: np.ndarray
    per_class_iou: np.ndarray  # NaN for classes absent from ground truth
    per_class_recall: np.ndarray
    miou: float
    macc: float

    def to_json(self, class_names=None) -> dict:
        k = len(self.counts)
        names = list(class_names) if class_names is not None else [str(j) for j in range(k)]
        nan_to_none = lambda x: None if np.isnan(x) else float(x)
        return {
            "per_class_iou": {n: nan_to_none(v) for n, v in zip(names, self.per_class_iou)},
            "miou": nan_to_none(self.miou),
            "macc": nan_to_none(self.macc),
            "counts": self.counts.tolist(),
        }


def confusion_matrix(pred, truth, k: int) -> np.ndarray:
    """Integer counts, rows = ground truth; sentinel ``-1`` entries are dropped."""
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"{pred.shape} predictions vs {truth.shape} labels")
    for name, arr in (("prediction", pred), ("ground truth", truth)):
        bad = (arr != INVALID) & ((arr < 0) | (arr >= k))
        if np.any(bad):
            raise LabelOutOfRange(f"{name} label {int(arr[bad][0])} outside [0, {k})")
    keep = (pred != INVALID) & (truth != INVALID)
    return np.bincount(truth[keep] * k + pred[keep], minlength=k * k).reshape(k, k)


def confusion_and_metrics(pred, truth, k: int) -> SegmentationMetrics:
    """IoU per class, mIoU and mAcc over classes present in the ground truth."""
    cm = confusion_matrix(pred, truth, k)
    tp = np.diag(cm).astype(np.float64)
    gt = cm.sum(axis=1).astype(np.float64)
    union = gt + cm.sum(axis=0) - tp
    present = gt > 0
    iou = np.full(k, np.nan)
    rec = np.full(k, np.nan)
    iou[present] = tp[present] / union[present]
    rec[present] = tp[present] / gt[present]
    miou = float(iou[present].mean()) if np.any(present) else float("nan")
    macc = float(rec[present].mean()) if np.any(present) else float("nan")
    return SegmentationMetrics(cm, iou, rec, miou, macc)
