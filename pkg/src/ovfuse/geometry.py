"""Pixel/point correspondence, occlusion testing and multi-view feature fusion."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChannelMismatch, ShapeMismatch
from .tensor import l2_normalize_rows, read_ply, read_tensor, write_ply


@dataclass
class PointScene:
    points: np.ndarray
    faces: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.faces is not None:
            self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.points),):
                raise ShapeMismatch(f"labels {self.labels.shape} vs {len(self.points)} points")

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_ply(cls, path) -> "PointScene":
        verts, faces, labels = read_ply(path)
        return cls(verts, faces, labels)

    def to_ply(self, path, text: bool = False) -> None:
        write_ply(path, self.points, self.faces, self.labels, text=text)


@dataclass
class CameraView:
    fx: float
    fy: float
    cx: float
    cy: float
    pose: np.ndarray  # 4x4 world -> camera
    depth: np.ndarray  # [H, W] metres, 0 = invalid
    width: int = 0
    height: int = 0

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(4, 4)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim != 2:
            raise ShapeMismatch(f"depth must be [H, W], got {self.depth.shape}")
        h, w = self.depth.shape
        self.height = self.height or h
        self.width = self.width or w
        if (self.height, self.width) != (h, w):
            raise ShapeMismatch(f"depth {self.depth.shape} vs image size {self.height}x{self.width}")
        rot = self.pose[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-5) or abs(np.linalg.det(rot) - 1.0) > 1e-5:
            raise ValueError("pose rotation block is not a proper rotation")
        if not np.allclose(self.pose[3], [0, 0, 0, 1]):
            raise ValueError("pose last row must be [0, 0, 0, 1]")
        if np.any(self.depth < 0) or not np.all(np.isfinite(self.depth)):
            raise ValueError("depth values must be finite and >= 0")


def load_camera(path):
    """Read a camera JSON file.

    Returns the view plus a dict of per-model feature map paths and a dict of
    per-model mask manifests, all resolved relative to the JSON file.
    """
    path = Path(path)
    meta = json.loads(path.read_text())
    base = path.parent
    intr = meta["intrinsics"]
    depth = read_tensor(base / meta["depth"])
    view = CameraView(
        fx=float(intr["fx"]), fy=float(intr["fy"]), cx=float(intr["cx"]), cy=float(intr["cy"]),
        pose=np.asarray(meta["pose"], dtype=np.float64).reshape(4, 4),
        depth=depth,
        width=int(meta["width"]), height=int(meta["height"]),
    )
    features = {k: base / v for k, v in meta.get("features", {}).items()}
    masks = {k: base / v for k, v in meta.get("masks", {}).items()}
    return view, features, masks


def camera_json(view: CameraView, depth_path: str, features=None, masks=None) -> dict:
    return {
        "intrinsics": {"fx": view.fx, "fy": view.fy, "cx": view.cx, "cy": view.cy},
        "pose": [float(v) for v in view.pose.reshape(-1)],
        "width": view.width,
        "height": view.height,
        "depth": depth_path,
        "features": dict(features or {}),
        "masks": dict(masks or {}),
    }


@dataclass
class Correspondences:
    """Column-wise store of pixel/point correspondences."""

    point_index: np.ndarray
    view_index: np.ndarray
    pixel_row: np.ndarray
    pixel_col: np.ndarray
    camera_distance: np.ndarray

    def __len__(self):
        return len(self.point_index)

    @classmethod
    def empty(cls) -> "Correspondences":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy(), np.zeros(0))

    @classmethod
    def concat(cls, parts) -> "Correspondences":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("point_index", "view_index", "pixel_row", "pixel_col", "camera_distance")))

    def take(self, idx) -> "Correspondences":
        return Correspondences(self.point_index[idx], self.view_index[idx], self.pixel_row[idx],
                               self.pixel_col[idx], self.camera_distance[idx])

    def canonical(self) -> "Correspondences":
        """Sorted by (view_index, point_index)."""
        order = np.lexsort((self.pixel_col, self.pixel_row, self.point_index, self.view_index))
        return self.take(order)

    def as_array(self) -> np.ndarray:
        return np.stack([self.point_index, self.view_index, self.pixel_row, self.pixel_col], axis=1)


@dataclass
class PointFeatureSet:
    features: np.ndarray
    valid: np.ndarray
    view_count: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.view_count is None:
            self.view_count = self.valid.astype(np.int64)
        self.view_count = np.asarray(self.view_count, dtype=np.int64)
        if self.features.ndim != 2 or self.valid.shape != (len(self.features),):
            raise ShapeMismatch(f"features {self.features.shape} vs valid {self.valid.shape}")

    def __len__(self):
        return len(self.features)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_features(cls, features, eps: float = 1e-12) -> "PointFeatureSet":
        """Rows with (near) zero norm are treated as unobserved."""
        normed, degenerate = l2_normalize_rows(features, eps)
        return cls(normed, ~degenerate)


def world_to_camera(points, pose):
    return points @ pose[:3, :3].T + pose[:3, 3]


def pixel_coords(cam, view: CameraView):
    """Nearest-pixel (row, col) for camera-space points with z > 0."""
    z = cam[:, 2]
    u = view.fx * cam[:, 0] / z + view.cx
    v = view.fy * cam[:, 1] / z + view.cy
    return np.floor(v + 0.5).astype(np.int64), np.floor(u + 0.5).astype(np.int64)


def project_points(scene, view: CameraView, sigma_rel: float, view_index: int = 0) -> Correspondences:
    """Points of ``scene`` visible in ``view``.

    A point is kept when it lies in front of the camera, rounds to a pixel
    inside the image whose depth is positive, and its camera-space depth is
    within ``sigma_rel * D`` of that pixel's depth ``D``.  With an all-zero
    depth map no occlusion test is possible and every in-frustum point is kept.
    """
    if sigma_rel <= 0:
        raise ValueError("sigma_rel must be positive")
    points = scene.points if isinstance(scene, PointScene) else np.asarray(scene, dtype=np.float64)
    cam = world_to_camera(points, view.pose)
    idx = np.flatnonzero(cam[:, 2] > 0)
    cam = cam[idx]
    with np.errstate(over="ignore", invalid="ignore"):
        row, col = pixel_coords(cam, view)
    inside = (row >= 0) & (row < view.height) & (col >= 0) & (col < view.width)
    idx, cam, row, col = idx[inside], cam[inside], row[inside], col[inside]
    dist = cam[:, 2]

    if np.any(view.depth > 0):
        d = view.depth[row, col]
        keep = (d > 0) & (np.abs(dist - d) < sigma_rel * d)
        idx, row, col, dist = idx[keep], row[keep], col[keep], dist[keep]

    return Correspondences(idx.astype(np.int64), np.full(len(idx), view_index, dtype=np.int64),
                           row, col, dist)


def project_views(scene, views, sigma_rel: float) -> Correspondences:
    parts = [project_points(scene, v, sigma_rel, view_index=i) for i, v in enumerate(views)]
    return Correspondences.concat(parts).canonical()


def multiview_fuse(per_view_feature_maps, correspondences: Correspondences, n_points: int) -> PointFeatureSet:
    """Average the pixel features each point sees, then L2-normalise."""
    maps = [np.asarray(m) for m in per_view_feature_maps]
    channels = {m.shape[-1] for m in maps}
    if len(channels) > 1 or any(m.ndim != 3 for m in maps):
        raise ChannelMismatch(f"feature maps disagree on channel count: {[m.shape for m in maps]}")
    c = channels.pop() if channels else 0
    corr = correspondences.canonical()
    sums = np.zeros((n_points, c))
    counts = np.zeros(n_points, dtype=np.int64)
    for v, fmap in enumerate(maps):
        sel = corr.view_index == v
        if not np.any(sel):
            continue
        rows, cols = corr.pixel_row[sel], corr.pixel_col[sel]
        if rows.max() >= fmap.shape[0] or cols.max() >= fmap.shape[1]:
            raise ShapeMismatch(f"view {v}: correspondence outside feature map {fmap.shape[:2]}")
        pts = corr.point_index[sel]
        np.add.at(sums, pts, fmap[rows, cols].astype(np.float64))
        counts += np.bincount(pts, minlength=n_points)
    valid = counts > 0
    means = np.zeros_like(sums)
    means[valid] = sums[valid] / counts[valid, None]
    feats, degenerate = l2_normalize_rows(means) if c else (means, ~valid)
    # features that cancel to zero carry no direction; treat as unobserved
    valid &= ~degenerate
    counts[~valid] = 0
    feats[~valid] = 0.0
    return PointFeatureSet(feats, valid, counts)


def voxel_downsample(scene: PointScene, voxel_size: float):
    """Keep one centroid per occupied voxel.

    Returns the reduced scene and an index map from every original point to
    its voxel's row in the reduced scene.  Labels, when present, become the
    per-voxel majority with ties going to the smallest class index.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    keys = np.floor(scene.points / voxel_size).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    m = int(inverse.max()) + 1 if len(inverse) else 0
    counts = np.bincount(inverse, minlength=m)
    centroids = np.stack([np.bincount(inverse, weights=scene.points[:, a], minlength=m) for a in range(3)], axis=1)
    centroids /= np.maximum(counts, 1)[:, None]

    labels = None
    if scene.labels is not None:
        labels = majority_vote(inverse, scene.labels, m)
    return PointScene(centroids, None, labels), inverse


def majority_vote(group, values, n_groups: int) -> np.ndarray:
    """Most frequent value per group; ties resolved to the smallest value."""
    pairs, counts = np.unique(np.stack([group, values], axis=1), axis=0, return_counts=True)
    # order: group asc, count desc, value asc -> first row per group wins
    order = np.lexsort((pairs[:, 1], -counts, pairs[:, 0]))
    pairs = pairs[order]
    first = np.ones(len(pairs), dtype=bool)
    first[1:] = pairs[1:, 0] != pairs[:-1, 0]
    out = np.full(n_groups, -1, dtype=np.int64)
    out[pairs[first, 0]] = pairs[first, 1]
    return out
