"""Synthetic rooms with exact ground truth, standing in for real scans and 2D models.

A room is a floor, four walls and a set of labelled axis-aligned boxes.  The
generator emits a triangle mesh (vertices are the scene points), ray-cast
depth maps for a ring of cameras, per-pixel features for "dense" synthetic
models, mask/label/caption sets for "mask" synthetic models, and capability
corpora of pseudo/model mask pairs.  Every synthetic model mislabels class
``c`` as ``confusion[c]`` with its configured per-class rate.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .capability import aggregate_attention, binarize_coarse_mask, sample_prompt_points
from .errors import EmptySpec
from .fusion import ClassEmbeddings
from .geometry import CameraView, PointScene, camera_json
from .tensor import write_pgm, write_tensor
from .text_bridge import MaskLabelSet, caption_substitute, rasterize_mask_features

WALL_THICKNESS = 0.05
ADJECTIVES = ("wooden", "grey", "small", "large", "white", "dark", "old", "modern")
FACE_AXES = {"+x": (0, 1), "-x": (0, -1), "+y": (1, 1), "-y": (1, -1), "+z": (2, 1), "-z": (2, -1)}


@dataclass
class Box:
    lo: tuple
    hi: tuple
    class_name: str
    faces: tuple = ("+x", "-x", "+y", "-y", "+z", "-z")


@dataclass
class ModelSpec:
    model_id: str
    kind: str = "dense"  # "dense" per-pixel features or "mask" mask/label/caption sets
    corruption: dict = field(default_factory=dict)  # class name -> rate


@dataclass
class CameraRing:
    count: int = 8
    radius: float = 2.2
    height: float = 2.2
    target_height: float = 0.4
    target_offset: float = 1.5
    width: int = 160
    height_px: int = 120
    fov_deg: float = 90.0


DEFAULT_CLASSES = ["chair", "table", "sofa", "cabinet", "bed", "wall", "floor"]


def default_objects() -> list:
    # at least 0.5 m from the walls so the camera ring sees most back faces
    return [
        Box((1.0, 1.0, 0.0), (1.5, 1.5, 0.9), "chair"),
        Box((1.0, 3.2, 0.0), (1.5, 3.7, 0.9), "chair"),
        Box((1.8, 1.6, 0.0), (3.4, 2.5, 0.75), "table"),
        Box((3.6, 0.8, 0.0), (5.2, 1.6, 0.8), "sofa"),
        Box((0.8, 3.9, 0.0), (1.3, 4.3, 1.8), "cabinet"),
        Box((3.8, 2.8, 0.0), (5.2, 4.2, 0.5), "bed"),
    ]


@dataclass
class SyntheticSceneSpec:
    room: tuple = (6.0, 5.0, 2.6)
    class_names: list = field(default_factory=lambda: list(DEFAULT_CLASSES))
    objects: list = field(default_factory=default_objects)
    wall_class: str | None = "wall"
    floor_class: str | None = "floor"
    cameras: CameraRing = field(default_factory=CameraRing)
    models: list = field(default_factory=lambda: [
        ModelSpec("A", "dense", {"chair": 0.8, "table": 0.8}),
        ModelSpec("B", "mask", {"sofa": 0.8, "cabinet": 0.8}),
    ])
    confusion: dict = field(default_factory=lambda: {
        "chair": "bed", "table": "wall", "sofa": "bed", "cabinet": "floor",
        "bed": "wall", "wall": "floor", "floor": "wall",
    })
    embedding_dim: int = 16
    noise_sigma: float = 0.05
    vertex_spacing: float = 0.06
    corpus_images: int = 20
    corpus_size: int = 32

    def __post_init__(self):
        self.objects = [o if isinstance(o, Box) else Box(**o) for o in self.objects]
        self.models = [m if isinstance(m, ModelSpec) else ModelSpec(**m) for m in self.models]
        if not isinstance(self.cameras, CameraRing):
            self.cameras = CameraRing(**self.cameras)
        self.room = tuple(self.room) if self.room is not None else None
        self.validate()

    def validate(self):
        names = set(self.class_names)
        if len(names) != len(self.class_names) or len(names) < 2:
            raise ValueError("class_names must hold at least two distinct names")
        if not self.objects and self.room is None:
            raise EmptySpec("scene has no primitives")
        if self.cameras.count < 1:
            raise EmptySpec("scene has no cameras")
        for box in self.objects:
            if box.class_name not in names:
                raise ValueError(f"object class {box.class_name!r} not in class_names")
            if any(h <= l for l, h in zip(box.lo, box.hi)):
                raise ValueError(f"degenerate box {box}")
        if self.room is not None:
            for c in (self.wall_class, self.floor_class):
                if c is not None and c not in names:
                    raise ValueError(f"room class {c!r} not in class_names")
        for model in self.models:
            if model.kind not in ("dense", "mask"):
                raise ValueError(f"model kind must be 'dense' or 'mask', got {model.kind!r}")
            for cls, rate in model.corruption.items():
                if cls not in names:
                    raise ValueError(f"corrupted class {cls!r} not in class_names")
                if not 0.0 <= rate <= 1.0:
                    raise ValueError(f"corruption rate {rate} outside [0, 1]")
                if rate > 0 and cls not in self.confusion:
                    raise ValueError(f"class {cls!r} is corrupted but has no confusion class")
        for src, dst in self.confusion.items():
            if src not in names or dst not in names or src == dst:
                raise ValueError(f"bad confusion pair {src!r} -> {dst!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "SyntheticSceneSpec":
        return cls(**data)


# --- geometry -------------------------------------------------------------------

def _primitives(spec: SyntheticSceneSpec):
    """Room surfaces then objects, as ``(Box, is_room_surface)``."""
    prims = []
    if spec.room is not None:
        sx, sy, sz = spec.room
        t = WALL_THICKNESS
        if spec.floor_class is not None:
            prims.append((Box((0, 0, -t), (sx, sy, 0), spec.floor_class, ("+z",)), True))
        if spec.wall_class is not None:
            w = spec.wall_class
            prims += [
                (Box((-t, 0, 0), (0, sy, sz), w, ("+x",)), True),
                (Box((sx, 0, 0), (sx + t, sy, sz), w, ("-x",)), True),
                (Box((0, -t, 0), (sx, 0, sz), w, ("+y",)), True),
                (Box((0, sy, 0), (sx, sy + t, sz), w, ("-y",)), True),
            ]
    for box in spec.objects:
        faces = tuple(f for f in box.faces if not (f == "-z" and box.lo[2] <= 1e-9))
        prims.append((Box(box.lo, box.hi, box.class_name, faces), False))
    return prims


def _face_grid(box: Box, face: str, spacing: float):
    axis, sign = FACE_AXES[face]
    lo, hi = np.asarray(box.lo, float), np.asarray(box.hi, float)
    b, c = (axis + 1) % 3, (axis + 2) % 3
    nb = max(2, int(round((hi[b] - lo[b]) / spacing)) + 1)
    nc = max(2, int(round((hi[c] - lo[c]) / spacing)) + 1)
    gb, gc = np.meshgrid(np.linspace(lo[b], hi[b], nb), np.linspace(lo[c], hi[c], nc), indexing="ij")
    verts = np.zeros((nb * nc, 3))
    verts[:, axis] = hi[axis] if sign > 0 else lo[axis]
    verts[:, b] = gb.reshape(-1)
    verts[:, c] = gc.reshape(-1)
    i, j = np.meshgrid(np.arange(nb - 1), np.arange(nc - 1), indexing="ij")
    v00 = (i * nc + j).reshape(-1)
    v10, v01, v11 = v00 + nc, v00 + 1, v00 + nc + 1
    # e_b x e_c = e_axis, so (v00, v10, v01) faces +axis
    if sign > 0:
        tris = np.concatenate([np.stack([v00, v10, v01], 1), np.stack([v10, v11, v01], 1)])
    else:
        tris = np.concatenate([np.stack([v00, v01, v10], 1), np.stack([v10, v01, v11], 1)])
    return verts, tris


def build_mesh(spec: SyntheticSceneSpec):
    """Returns ``(vertices, faces, class labels, primitive ids)``."""
    prims = _primitives(spec)
    boxes = [p for p, _ in prims]
    all_v, all_f, all_lab, all_pid = [], [], [], []
    offset = 0
    eps = 1e-6
    for pid, (box, is_room) in enumerate(prims):
        for face in box.faces:
            verts, tris = _face_grid(box, face, spec.vertex_spacing)
            keep = np.ones(len(verts), dtype=bool)
            # drop surface hidden inside other boxes (floor under furniture, etc.)
            for qid, other in enumerate(boxes):
                if qid == pid or (not is_room and prims[qid][1]):
                    continue
                lo, hi = np.asarray(other.lo) - eps, np.asarray(other.hi) + eps
                keep &= ~np.all((verts >= lo) & (verts <= hi), axis=1)
            remap = np.full(len(verts), -1, dtype=np.int64)
            remap[keep] = np.arange(np.count_nonzero(keep)) + offset
            tris = remap[tris]
            tris = tris[np.all(tris >= 0, axis=1)]
            all_v.append(verts[keep])
            all_f.append(tris)
            all_lab.append(np.full(np.count_nonzero(keep), spec.class_names.index(box.class_name)))
            all_pid.append(np.full(np.count_nonzero(keep), pid))
            offset += np.count_nonzero(keep)
    return (np.concatenate(all_v), np.concatenate(all_f).astype(np.int64),
            np.concatenate(all_lab).astype(np.int64), np.concatenate(all_pid).astype(np.int64), boxes)


def look_at_pose(position, target):
    """World->camera transform for a camera at ``position`` looking at ``target`` (x right, y down, z forward)."""
    position = np.asarray(position, float)
    fwd = np.asarray(target, float) - position
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    pose = np.eye(4)
    pose[:3, :3] = rot
    pose[:3, 3] = -rot @ position
    return pose


def camera_rays(view: CameraView):
    """Per-pixel world-space origins and directions whose camera-space z component is 1."""
    rows, cols = np.meshgrid(np.arange(view.height), np.arange(view.width), indexing="ij")
    d_cam = np.stack([(cols - view.cx) / view.fx, (rows - view.cy) / view.fy, np.ones_like(rows, float)], -1)
    rot = view.pose[:3, :3]
    origin = -rot.T @ view.pose[:3, 3]
    return origin, d_cam.reshape(-1, 3) @ rot


def ray_cast(origin, dirs, boxes):
    """Nearest positive hit parameter and box id per ray (``inf`` / ``-1`` on a miss)."""
    dirs = np.where(np.abs(dirs) < 1e-15, 1e-15, dirs)
    best_t = np.full(len(dirs), np.inf)
    best_id = np.full(len(dirs), -1, dtype=np.int64)
    for bid, box in enumerate(boxes):
        t1 = (np.asarray(box.lo) - origin) / dirs
        t2 = (np.asarray(box.hi) - origin) / dirs
        tnear = np.minimum(t1, t2).max(axis=1)
        tfar = np.maximum(t1, t2).min(axis=1)
        hit = (tnear <= tfar) & (tnear > 0) & (tnear < best_t)
        best_t[hit] = tnear[hit]
        best_id[hit] = bid
    return best_t, best_id


def ring_cameras(spec: SyntheticSceneSpec, center):
    ring = spec.cameras
    f = (ring.width / 2) / np.tan(np.radians(ring.fov_deg) / 2)
    cams = []
    for i in range(ring.count):
        theta = 2 * np.pi * i / ring.count
        direction = np.array([np.cos(theta), np.sin(theta), 0.0])
        pos = np.asarray(center) + ring.radius * direction
        pos[2] = ring.height
        target = np.asarray(center) - ring.target_offset * direction
        target[2] = ring.target_height
        cams.append((f, f, (ring.width - 1) / 2, (ring.height_px - 1) / 2, look_at_pose(pos, target)))
    return cams


# --- synthetic models -------------------------------------------------------------

def class_embeddings(names, dim: int, rng) -> ClassEmbeddings:
    """Random unit vectors, orthonormal when ``len(names) <= dim``."""
    g = rng.normal(size=(dim, len(names)))
    if len(names) <= dim:
        q, r = np.linalg.qr(g)
        vecs = (q * np.sign(np.diag(r))).T
    else:
        vecs = g.T
    return ClassEmbeddings(list(names), vecs)


class SyntheticTextEncoder:
    """Maps a caption to the embedding of the class name it mentions, plus caption-seeded jitter."""

    def __init__(self, emb: ClassEmbeddings, noise_sigma: float):
        self.emb = emb
        self.noise_sigma = noise_sigma
        # longest names first so "shower curtain" beats "curtain"
        self._names = sorted(emb.names, key=len, reverse=True)

    def encode(self, caption: str) -> np.ndarray:
        rng = np.random.default_rng(zlib.crc32(caption.encode("utf-8")))
        for name in self._names:
            if name in caption:
                base = self.emb.vectors[self.emb.index(name)]
                break
        else:
            base = rng.normal(size=self.emb.channels)
            base /= np.linalg.norm(base)
        return base + self.noise_sigma * rng.normal(size=self.emb.channels)


def _corruption_table(spec: SyntheticSceneSpec, model: ModelSpec):
    k = len(spec.class_names)
    rate = np.zeros(k)
    target = np.arange(k)
    for name, r in model.corruption.items():
        j = spec.class_names.index(name)
        rate[j] = r
        target[j] = spec.class_names.index(spec.confusion[name])
    return rate, target


@dataclass
class SyntheticScene:
    spec: SyntheticSceneSpec
    scene: PointScene
    primitive_ids: np.ndarray
    boxes: list
    views: list
    pixel_labels: list  # [H, W] class index, -1 where the ray escapes
    pixel_prims: list
    emb: ClassEmbeddings
    feature_maps: dict  # dense models: model id -> list of [H, W, C]
    mask_sets: dict  # mask models: model id -> list of MaskLabelSet
    corpus: dict  # model id -> {class name: [(pseudo, model mask)]}

    def model_feature_maps(self, model_id: str) -> list:
        if model_id in self.feature_maps:
            return self.feature_maps[model_id]
        c = self.emb.channels
        return [rasterize_mask_features(ms, v.width, v.height, c)[0]
                for ms, v in zip(self.mask_sets[model_id], self.views)]

    @property
    def model_ids(self) -> list:
        return [m.model_id for m in self.spec.models]


def _dense_maps(labels, rate, target, emb, sigma, rng):
    k_idx = np.where(labels >= 0, labels, 0)
    flip = (labels >= 0) & (rng.random(labels.shape) < rate[k_idx])
    cls = np.where(flip, target[k_idx], k_idx)
    feat = emb.vectors[cls] + sigma * rng.normal(size=labels.shape + (emb.channels,))
    feat[labels < 0] = 0.0
    return feat


def _mask_set(labels, prims, rate, target, names, encoder, rng):
    masks, labs, caps, spans = [], [], [], []
    for pid in np.unique(prims[prims >= 0]):
        m = prims == pid
        true_cls = int(labels[m][0])
        cls = int(target[true_cls]) if rng.random() < rate[true_cls] else true_cls
        adj = ADJECTIVES[int(rng.integers(len(ADJECTIVES)))]
        # the captioner names the object correctly; its noun is swapped for the model's label
        caption = f"a {adj} {names[true_cls]}"
        start = len(f"a {adj} ".encode("utf-8"))
        masks.append(m)
        labs.append(names[cls])
        caps.append(caption)
        spans.append((start, len(caption.encode("utf-8"))))
    ms = MaskLabelSet(masks, labs, caps, spans)
    c = encoder.emb.channels
    ms.embeddings = (np.stack([encoder.encode(s) for s in ms.substituted_captions()])
                     if masks else np.zeros((0, c)))
    return ms


def _ellipse(size, rng):
    rows, cols = np.mgrid[0:size, 0:size]
    cy, cx = rng.uniform(size * 0.3, size * 0.7, 2)
    ry, rx = rng.uniform(size * 0.15, size * 0.3, 2)
    return ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0, (cy, cx, ry, rx)


def _synthetic_pseudo_mask(size, rng):
    """Object mask plus the pseudo mask recovered from simulated cross-attention and point prompts."""
    obj, (cy, cx, ry, rx) = _ellipse(size, rng)
    rows, cols = np.mgrid[0:size, 0:size]
    bump = np.exp(-0.5 * (((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2))
    scales = rng.uniform(0.2, 5.0, (2, 3, 1, 1))
    stack = scales * (bump + 0.05 * rng.random((2, 3, size, size)))
    coarse = binarize_coarse_mask(aggregate_attention(stack), 0.5)
    prompts = sample_prompt_points(coarse, 3, int(rng.integers(2**31)))
    # stand-in promptable segmenter: snaps to the object the prompts land on
    inside = obj[prompts[:, 0], prompts[:, 1]]
    return obj, (obj if inside.mean() >= 0.5 else coarse)


def synth_generate(spec: SyntheticSceneSpec | None = None, seed: int = 0) -> SyntheticScene:
    spec = spec or SyntheticSceneSpec()
    spec.validate()
    ss = np.random.SeedSequence(seed)
    rng_emb, rng_feat, rng_corpus = (np.random.default_rng(s) for s in ss.spawn(3))

    verts, faces, labels, pids, boxes = build_mesh(spec)
    if len(verts) == 0:
        raise EmptySpec("scene has no surface points")
    scene = PointScene(verts, faces, labels)
    emb = class_embeddings(spec.class_names, spec.embedding_dim, rng_emb)

    if spec.room is not None:
        center = np.array([spec.room[0] / 2, spec.room[1] / 2, 0.0])
    else:
        center = np.r_[(verts.min(0) + verts.max(0))[:2] / 2, 0.0]
    ring = spec.cameras
    views, pix_labels, pix_prims = [], [], []
    box_classes = np.array([spec.class_names.index(b.class_name) for b in boxes])
    for fx, fy, cx, cy, pose in ring_cameras(spec, center):
        probe = CameraView(fx, fy, cx, cy, pose, np.zeros((ring.height_px, ring.width)))
        origin, dirs = camera_rays(probe)
        t, bid = ray_cast(origin, dirs, boxes)
        depth = np.where(bid >= 0, t, 0.0).reshape(ring.height_px, ring.width)
        views.append(CameraView(fx, fy, cx, cy, pose, depth))
        bid = bid.reshape(depth.shape)
        pix_prims.append(bid)
        pix_labels.append(np.where(bid >= 0, box_classes[np.maximum(bid, 0)], -1))

    encoder = SyntheticTextEncoder(emb, spec.noise_sigma)
    feature_maps, mask_sets = {}, {}
    model_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed + 1).spawn(len(spec.models))]
    for model, mrng in zip(spec.models, model_rngs):
        rate, target = _corruption_table(spec, model)
        if model.kind == "dense":
            feature_maps[model.model_id] = [
                _dense_maps(lab, rate, target, emb, spec.noise_sigma, mrng) for lab in pix_labels]
        else:
            mask_sets[model.model_id] = [
                _mask_set(lab, pr, rate, target, spec.class_names, encoder, mrng)
                for lab, pr in zip(pix_labels, pix_prims)]

    corpus = {m.model_id: {} for m in spec.models}
    rates = {m.model_id: _corruption_table(spec, m)[0] for m in spec.models}
    for j, name in enumerate(spec.class_names):
        for m in spec.models:
            corpus[m.model_id][name] = []
        for _ in range(spec.corpus_images):
            obj, pseudo = _synthetic_pseudo_mask(spec.corpus_size, rng_corpus)
            for m in spec.models:
                wrong = rng_corpus.random() < rates[m.model_id][j]
                corpus[m.model_id][name].append((pseudo, np.zeros_like(pseudo) if wrong else pseudo.copy()))

    return SyntheticScene(spec, scene, pids, boxes, views, pix_labels, pix_prims, emb,
                          feature_maps, mask_sets, corpus)


# --- on-disk layout ---------------------------------------------------------------

def write_synthetic(syn: SyntheticScene, directory) -> Path:
    """Write the scene in the pipeline's input layout; returns the path of ``pipeline.json``."""
    root = Path(directory)
    (root / "views").mkdir(parents=True, exist_ok=True)
    (root / "capability" / "masks").mkdir(parents=True, exist_ok=True)

    syn.scene.to_ply(root / "scene.ply")
    write_tensor(syn.scene.labels.astype(np.int32), root / "labels.ovt")
    write_tensor(syn.emb.vectors.astype(np.float32), root / "class_embeddings.ovt")
    (root / "classes.json").write_text(json.dumps(
        {"names": syn.emb.names, "embeddings": "class_embeddings.ovt"}, indent=2) + "\n")
    (root / "synth_spec.json").write_text(json.dumps(syn.spec.to_json(), indent=2) + "\n")

    camera_paths = []
    for i, view in enumerate(syn.views):
        depth_name = f"depth_{i:03d}.ovt"
        write_tensor(view.depth.astype(np.float32), root / "views" / depth_name)
        features, masks = {}, {}
        for mid, maps in syn.feature_maps.items():
            name = f"feat_{mid}_{i:03d}.ovt"
            write_tensor(maps[i].astype(np.float32), root / "views" / name)
            features[mid] = name
        for mid, sets in syn.mask_sets.items():
            sub = f"masks_{mid}_{i:03d}"
            (root / "views" / sub).mkdir(exist_ok=True)
            ms = sets[i]
            entries = []
            for j, (m, lab, cap, span) in enumerate(zip(ms.masks, ms.labels, ms.captions, ms.noun_spans)):
                write_pgm(m, root / "views" / sub / f"mask_{j:03d}.pgm")
                entries.append({"mask": f"mask_{j:03d}.pgm", "label": lab, "caption": cap,
                                "noun_span": list(span)})
            write_tensor(np.asarray(ms.embeddings, dtype=np.float32).reshape(len(entries), -1),
                         root / "views" / sub / "embeddings.ovt")
            (root / "views" / sub / "manifest.json").write_text(
                json.dumps({"embeddings": "embeddings.ovt", "masks": entries}, indent=1) + "\n")
            masks[mid] = f"{sub}/manifest.json"
        cam_path = root / "views" / f"view_{i:03d}.json"
        cam_path.write_text(json.dumps(camera_json(view, depth_name, features, masks), indent=1) + "\n")
        camera_paths.append(f"views/view_{i:03d}.json")

    manifest = {}
    for mid, classes in syn.corpus.items():
        manifest[mid] = {}
        for name, pairs in classes.items():
            entries = []
            slug = name.replace(" ", "_")
            for j, (pseudo, model_mask) in enumerate(pairs):
                p_name = f"masks/pseudo_{slug}_{j:03d}.pgm"
                m_name = f"masks/{mid}_{slug}_{j:03d}.pgm"
                if not (root / "capability" / p_name).exists():
                    write_pgm(pseudo, root / "capability" / p_name)
                write_pgm(model_mask, root / "capability" / m_name)
                entries.append({"pseudo_mask": p_name, "model_mask": m_name})
            manifest[mid][name] = entries
    (root / "capability" / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")

    config = {
        "scene": "scene.ply",
        "views": camera_paths,
        "models": syn.model_ids,
        "classes": "classes.json",
        "labels": "labels.ovt",
        "capability_corpus": "capability/manifest.json",
        # tight occlusion test: synthetic depth is exact
        "sigma_rel": 0.02,
    }
    path = root / "pipeline.json"
    path.write_text(json.dumps(config, indent=2) + "\n")
    return path


# --- coverage control -------------------------------------------------------------

def hide_patches(points, observed, fraction: float, radius: float = 0.3, seed: int = 0) -> np.ndarray:
    """Mask of observed points to blind so that at least ``fraction`` of all points lack a view.

    Blinded regions are balls of ``radius`` around random observed points,
    added one at a time until the unobserved share reaches ``fraction``.
    """
    points = np.asarray(points, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    hidden = np.zeros(len(points), dtype=bool)
    need = int(np.ceil(fraction * len(points)))
    while np.count_nonzero(~observed | hidden) < need:
        candidates = np.flatnonzero(observed & ~hidden)
        c = points[candidates[rng.integers(len(candidates))]]
        ball = np.sum((points - c) ** 2, axis=1) <= radius ** 2
        hidden |= ball & observed
    return hidden


def drop_points(corr, hidden):
    """Correspondences without the points flagged in ``hidden``."""
    return corr.take(~np.asarray(hidden, dtype=bool)[corr.point_index])
