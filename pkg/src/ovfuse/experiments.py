"""Synthetic experiments shared by ``scripts/`` and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .capability import build_capability
from .distill import TrainSchedule, train
from .fusion import capability_fuse, fuse_add, fuse_linear
from .geometry import multiview_fuse, project_views
from .metrics import classify_points, confusion_and_metrics
from .superpoint import identity_partition, segment_mesh
from .synth import SyntheticSceneSpec, drop_points, hide_patches, synth_generate


@dataclass
class EnsembleResult:
    n_points: int
    n_views: int
    miou: dict  # method -> mIoU over observed points
    per_class_iou: dict  # method -> per-class IoU
    ceiling_per_class_iou: np.ndarray
    ceiling_miou: float
    corrupted: list  # class indices corrupted by some model

    @property
    def margin(self) -> float:
        return self.miou["fused"] - max(self.miou[m] for m in ("A", "B"))

    @property
    def uncorrupted(self) -> np.ndarray:
        k = len(self.ceiling_per_class_iou)
        return np.array([j for j in range(k) if j not in self.corrupted])

    @property
    def ceiling_ratio(self) -> float:
        """Worst per-class ratio of fused IoU to the zero-corruption IoU, over uncorrupted classes."""
        j = self.uncorrupted
        return float(np.min(self.per_class_iou["fused"][j] / self.ceiling_per_class_iou[j]))


def _two_model_sets(syn, sigma_rel, hidden=None):
    n = len(syn.scene)
    corr = project_views(syn.scene, syn.views, sigma_rel)
    if hidden is not None:
        corr = drop_points(corr, hidden)
    sets = {m: multiview_fuse(syn.model_feature_maps(m), corr, n) for m in syn.model_ids}
    caps = [build_capability(m, syn.corpus[m], syn.emb.names) for m in syn.model_ids]
    return corr, sets, caps


def _scores(f, syn, mask=None):
    pred = classify_points(f, syn.emb)
    lab = syn.scene.labels
    if mask is not None:
        pred, lab = pred[mask], lab[mask]
    return confusion_and_metrics(pred, lab, len(syn.emb))


def ensemble_experiment(spec: SyntheticSceneSpec | None = None, seed: int = 0, sigma_rel: float = 0.02
                        ) -> EnsembleResult:
    """Single models, the capability-guided fusion and two baselines, plus a zero-corruption rerun."""
    spec = spec or SyntheticSceneSpec()
    syn = synth_generate(spec, seed)
    _, sets, caps = _two_model_sets(syn, sigma_rel)
    feats = list(sets.values())
    methods = dict(sets)
    methods["fused"] = capability_fuse(feats, caps, syn.emb)
    methods["add"] = fuse_add(feats)
    methods["linear"] = fuse_linear(feats, syn.emb)
    scores = {k: _scores(v, syn) for k, v in methods.items()}

    clean = replace(spec, models=[replace(m, corruption={}) for m in spec.models])
    syn0 = synth_generate(clean, seed)
    _, sets0, caps0 = _two_model_sets(syn0, sigma_rel)
    ceiling = _scores(capability_fuse(list(sets0.values()), caps0, syn0.emb), syn0)

    corrupted = sorted({spec.class_names.index(c) for m in spec.models for c, r in m.corruption.items() if r > 0})
    return EnsembleResult(
        n_points=len(syn.scene), n_views=len(syn.views),
        miou={k: s.miou for k, s in scores.items()},
        per_class_iou={k: s.per_class_iou for k, s in scores.items()},
        ceiling_per_class_iou=ceiling.per_class_iou, ceiling_miou=ceiling.miou, corrupted=corrupted,
    )


@dataclass
class DistillResult:
    unobserved_fraction: float
    fused_valid_miou: float
    distilled_miou: float
    distilled_unobserved_miou: float
    losses: list = field(default_factory=list)


def distill_experiment(spec: SyntheticSceneSpec | None = None, seed: int = 0, sigma_rel: float = 0.02,
                       unobserved: float = 0.10, schedule: TrainSchedule | None = None,
                       superpoints: str = "mesh") -> DistillResult:
    """Blind patches until ``unobserved`` of the points lack a view, fuse, then train the student."""
    spec = spec or SyntheticSceneSpec()
    syn = synth_generate(spec, seed)
    n = len(syn.scene)
    corr = project_views(syn.scene, syn.views, sigma_rel)
    observed = np.bincount(corr.point_index, minlength=n) > 0
    hidden = hide_patches(syn.scene.points, observed, unobserved, seed=seed)
    _, sets, caps = _two_model_sets(syn, sigma_rel, hidden)
    fused = capability_fuse(list(sets.values()), caps, syn.emb)
    v = fused.valid

    if superpoints == "identity":
        part = identity_partition(n)
    else:
        part = segment_mesh(syn.scene.points, syn.scene.faces)
    model, log = train(syn.scene.points, fused, part, syn.emb, schedule or TrainSchedule())
    out = model(syn.scene.points)
    return DistillResult(
        unobserved_fraction=float(np.mean(~v)),
        fused_valid_miou=_scores(fused, syn, v).miou,
        distilled_miou=_scores(out, syn).miou,
        distilled_unobserved_miou=_scores(out, syn, ~v).miou,
        losses=log.column("loss"),
    )
