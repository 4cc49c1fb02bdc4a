"""End-to-end orchestration: project, align, score, fuse, partition, distill, evaluate.

Every stage writes its outputs into one artifact directory and the run ends
with ``manifest.json``, which lists the config hash, stage versions and a
sha256 per artifact.  Nothing time- or host-dependent is recorded, so two
runs on identical inputs produce identical directories.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .capability import CapabilityTable, build_capability, load_capability_corpus
from .errors import ConfigError, StageError
from .fusion import FusionConfig, capability_fuse, load_classes
from .geometry import PointFeatureSet, PointScene, load_camera, multiview_fuse, project_views, voxel_downsample
from .metrics import LabelMap, classify_points, confusion_and_metrics
from .superpoint import identity_partition, segment_mesh
from .distill import TrainSchedule, train
from .tensor import read_tensor, write_ply, write_tensor
from .text_bridge import load_mask_set, rasterize_mask_features

STAGE_VERSIONS = {
    "load": 1, "project": 1, "align": 1, "capability": 1, "fuse": 1,
    "superpoints": 1, "distill": 1, "eval": 1,
}


@dataclass
class SuperpointConfig:
    mode: str = "mesh"  # "mesh" or "identity"
    k: float = 0.02
    min_size: int = 50

    def __post_init__(self):
        if self.mode not in ("mesh", "identity"):
            raise ConfigError(f"superpoints.mode must be 'mesh' or 'identity', got {self.mode!r}")
        if not self.k > 0 or self.min_size < 1:
            raise ConfigError("superpoints.k must be > 0 and superpoints.min_size >= 1")


def _strict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class PipelineConfig:
    scene: str
    views: list
    models: list
    classes: str
    labels: str | None = None
    label_map: str | None = None
    capability_corpus: str | None = None
    capabilities: dict = field(default_factory=dict)  # model id -> precomputed table JSON
    output: str = "artifacts"
    sigma_rel: float = 0.2
    voxel_size: float | None = None
    tau: float = 0.1
    superpoints: SuperpointConfig = field(default_factory=SuperpointConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    base_dir: str = "."  # relative paths resolve against this; not part of the hash

    def __post_init__(self):
        if isinstance(self.superpoints, dict):
            self.superpoints = _strict(SuperpointConfig, self.superpoints, "superpoints")
        if isinstance(self.schedule, dict):
            self.schedule = _strict(TrainSchedule, self.schedule, "schedule")
        self.validate()

    def validate(self):
        if not self.views:
            raise ConfigError("views must list at least one camera file")
        if not self.models or len(set(self.models)) != len(self.models):
            raise ConfigError("models must list distinct model ids")
        if not self.sigma_rel > 0:
            raise ConfigError("sigma_rel must be > 0")
        if self.voxel_size is not None and not self.voxel_size > 0:
            raise ConfigError("voxel_size must be > 0 when given")
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")
        missing = [m for m in self.models if m not in self.capabilities]
        if missing and self.capability_corpus is None:
            raise ConfigError(f"no capability table or corpus for model(s) {missing}")
        if self.voxel_size is not None and self.superpoints.mode == "mesh":
            raise ConfigError("mesh superpoints need the original mesh; drop voxel_size or use identity")

    @classmethod
    def from_json(cls, data: dict, base_dir=".") -> "PipelineConfig":
        data = dict(data)
        if "base_dir" in data:
            raise ConfigError("unknown key(s) in config: base_dir")
        data["base_dir"] = str(base_dir)
        for key in ("scene", "views", "models", "classes"):
            if key not in data:
                raise ConfigError(f"config is missing required key {key!r}")
        return _strict(cls, data, "config")

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for key, value in (overrides or {}).items():
            _set_dotted(data, key, value)
        return cls.from_json(data, path.parent)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def config_hash(self) -> str:
        d = self.to_json()
        d.pop("output")
        return _sha256(json.dumps(d, sort_keys=True).encode())


def _set_dotted(data: dict, key: str, value):
    parts = key.split(".")
    for p in parts[:-1]:
        data = data.setdefault(p, {})
    data[parts[-1]] = value


def _sha256(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


class _Stage:
    """Context manager that rewraps failures as ``StageError`` naming the stage."""

    def __init__(self, name: str, path=None):
        self.name = name
        self.path = path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if not isinstance(exc, Exception):
            return False
        raise StageError(self.name, self.path, exc) from exc


def metrics_block(f, emb, labels, label_map=None, mask=None) -> dict:
    """Metrics JSON for features ``f`` against ``labels`` (optionally restricted to ``mask``)."""
    pred = classify_points(f, emb, label_map)
    names = label_map.coarse_names if label_map is not None else emb.names
    if mask is not None:
        pred, labels = pred[mask], labels[mask]
    return confusion_and_metrics(pred, labels, len(names)).to_json(names)


def align_model(model_id: str, cameras, corr, n_points: int, channels: int) -> PointFeatureSet:
    """Per-view feature maps for one model (dense or mask-rasterized), fused onto points."""
    maps = []
    for cam_path, view, features, masks in cameras:
        if model_id in features:
            fmap = read_tensor(features[model_id]).astype(np.float64)
            if fmap.shape != (view.height, view.width, channels):
                raise StageError("align", features[model_id],
                                 ValueError(f"feature map {fmap.shape} vs expected {(view.height, view.width, channels)}"))
        elif model_id in masks:
            fmap = rasterize_mask_features(load_mask_set(masks[model_id]), view.width, view.height, channels)[0]
        else:
            raise StageError("align", cam_path, KeyError(f"camera lists no features or masks for model {model_id!r}"))
        maps.append(fmap)
    return multiview_fuse(maps, corr, n_points)


def run_pipeline(cfg: PipelineConfig, output=None) -> Path:
    """Run every stage; returns the artifact directory."""
    out = Path(output) if output is not None else cfg.path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {}

    def record_input(p: Path):
        try:
            key = str(p.relative_to(cfg.base_dir))
        except ValueError:
            key = p.name
        inputs[key] = _sha256(p.read_bytes())

    # load
    scene_path = cfg.path(cfg.scene)
    with _Stage("load", scene_path):
        scene = PointScene.from_ply(scene_path)
        record_input(scene_path)
    classes_path = cfg.path(cfg.classes)
    with _Stage("load", classes_path):
        emb = load_classes(classes_path)
        record_input(classes_path)
    labels = scene.labels
    if cfg.labels is not None:
        labels_path = cfg.path(cfg.labels)
        with _Stage("load", labels_path):
            labels = read_tensor(labels_path).astype(np.int64).reshape(-1)
            if len(labels) != len(scene):
                raise ValueError(f"{len(labels)} labels for {len(scene)} points")
            record_input(labels_path)
    label_map = None
    if cfg.label_map is not None:
        map_path = cfg.path(cfg.label_map)
        with _Stage("load", map_path):
            label_map = LabelMap.load(map_path)
            record_input(map_path)
    if labels is not None:
        scene = PointScene(scene.points, scene.faces, labels)
    if cfg.voxel_size is not None:
        with _Stage("load", scene_path):
            scene, _ = voxel_downsample(scene, cfg.voxel_size)
    labels = scene.labels

    cameras = []
    for v in cfg.views:
        cam_path = cfg.path(v)
        with _Stage("load", cam_path):
            view, feats, masks = load_camera(cam_path)
            cameras.append((cam_path, view, feats, masks))
            record_input(cam_path)

    # project
    with _Stage("project", scene_path):
        corr = project_views(scene, [c[1] for c in cameras], cfg.sigma_rel)

    # align
    aligned = {}
    for mid in cfg.models:
        with _Stage("align", mid):
            aligned[mid] = align_model(mid, cameras, corr, len(scene), emb.channels)
        write_tensor(aligned[mid].features.astype(np.float32), out / f"features_{mid}.ovt")

    # capability
    caps = {}
    if cfg.capability_corpus is not None:
        corpus_path = cfg.path(cfg.capability_corpus)
        with _Stage("capability", corpus_path):
            corpus = load_capability_corpus(corpus_path)
            record_input(corpus_path)
        for mid in cfg.models:
            if mid in cfg.capabilities:
                continue
            with _Stage("capability", corpus_path):
                if mid not in corpus:
                    raise KeyError(f"corpus has no entries for model {mid!r}")
                caps[mid] = build_capability(mid, corpus[mid], emb.names)

    # fuse
    for mid, p in cfg.capabilities.items():
        cap_path = cfg.path(p)
        with _Stage("fuse", cap_path):
            caps[mid] = CapabilityTable.load(cap_path, emb.names)
            record_input(cap_path)
    for mid in cfg.models:
        caps[mid].save(out / f"capability_{mid}.json")
    with _Stage("fuse", out):
        fused = capability_fuse([aligned[m] for m in cfg.models], [caps[m] for m in cfg.models], emb,
                                FusionConfig(cfg.tau))
    write_tensor(fused.features.astype(np.float32), out / "fused.ovt")

    # superpoints
    with _Stage("superpoints", scene_path):
        if cfg.superpoints.mode == "identity":
            part = identity_partition(len(scene))
        else:
            part = segment_mesh(scene.points, scene.faces, cfg.superpoints.k, cfg.superpoints.min_size)
    part.save(out / "superpoints.ovt")

    # distill
    with _Stage("distill", out / "fused.ovt"):
        model, log = train(scene.points, fused, part, emb, cfg.schedule)
        model.save(out / "model", {"tau_ce": cfg.schedule.tau_ce, "seed": cfg.schedule.seed})
    (out / "train_log.json").write_text(json.dumps(log.to_json(), indent=1) + "\n")
    distilled = PointFeatureSet.from_features(model(scene.points))
    write_tensor(distilled.features.astype(np.float32), out / "distilled.ovt")

    # eval
    with _Stage("eval", out):
        pred = classify_points(distilled, emb, label_map)
        write_tensor(pred.astype(np.int32), out / "predictions.ovt")
        write_ply(out / "predictions.ply", scene.points, None, pred)
        metrics = {}
        if labels is not None:
            metrics = {
                "models": {m: metrics_block(aligned[m], emb, labels, label_map) for m in cfg.models},
                "fused": metrics_block(fused, emb, labels, label_map),
                "fused_valid_fraction": float(fused.valid.mean()),
                "distilled": metrics_block(distilled, emb, labels, label_map),
            }
            if np.any(~fused.valid):
                metrics["distilled_unobserved"] = metrics_block(distilled, emb, labels, label_map, ~fused.valid)
            metrics["miou"] = metrics["distilled"]["miou"]
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1) + "\n")

    write_manifest(out, cfg, inputs)
    return out


def write_manifest(out: Path, cfg: PipelineConfig, inputs: dict) -> dict:
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out).as_posix()] = _sha256(p.read_bytes())
    manifest = {
        "config": cfg.to_json() | {"output": None},
        "config_sha256": cfg.config_hash(),
        "stage_versions": STAGE_VERSIONS,
        "inputs": dict(sorted(inputs.items())),
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def manifest_hash(out) -> str:
    return _sha256((Path(out) / "manifest.json").read_bytes())

