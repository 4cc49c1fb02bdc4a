"""Superpoints from mesh normals and the pooling/broadcast used by distillation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMesh, ShapeMismatch
from .geometry import PointFeatureSet
from .tensor import l2_normalize_rows, read_tensor, write_tensor


@dataclass
class SuperpointPartition:
    """Per-point segment ids in ``[0, n_segments)``; ``-1`` marks points outside every segment."""

    assignment: np.ndarray
    n_segments: int = -1

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64).reshape(-1)
        if self.n_segments < 0:
            self.n_segments = int(self.assignment.max()) + 1 if self.assignment.size else 0
        a = self.assignment
        if a.size and (a.min() < -1 or a.max() >= self.n_segments):
            raise ShapeMismatch(f"segment ids outside [0, {self.n_segments})")
        if np.any(self.sizes == 0):
            raise ValueError("every segment needs at least one point")

    def __len__(self):
        return len(self.assignment)

    @property
    def sizes(self) -> np.ndarray:
        a = self.assignment
        return np.bincount(a[a >= 0], minlength=self.n_segments)

    def save(self, path) -> None:
        write_tensor(self.assignment.astype(np.int32), path)

    @classmethod
    def load(cls, path) -> "SuperpointPartition":
        return cls(read_tensor(path).astype(np.int64))


def identity_partition(n_points: int) -> SuperpointPartition:
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    return SuperpointPartition(np.arange(n_points), n_points)


def vertex_normals(vertices, faces) -> np.ndarray:
    """Area-weighted average of incident face normals, unit length (zero for isolated vertices)."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    # cross product length is twice the triangle area, which is the weight we want
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    acc = np.zeros_like(v)
    for c in range(3):
        np.add.at(acc, f[:, c], fn)
    return l2_normalize_rows(acc)[0]


def mesh_edges(faces) -> np.ndarray:
    f = np.asarray(faces, dtype=np.int64)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    return np.unique(e, axis=0)


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n
        self.internal = [0.0] * n

    def find(self, x):
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a, b, w):
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        self.internal[a] = max(self.internal[a], self.internal[b], w)
        return a


def _compact_labels(roots) -> np.ndarray:
    """Relabel component roots to 0..L-1 in order of first appearance."""
    _, first, inverse = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse.reshape(-1)]


def segment_graph(n_vertices: int, edges, weights, k: float, min_size: int) -> np.ndarray:
    """Graph segmentation with the adaptive ``Int(C) + k/|C|`` merge criterion.

    Edges are processed by ascending ``(weight, u, v)``.  A second pass over the
    same order merges any component still smaller than ``min_size`` into the
    neighbour across its lightest remaining edge.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    weights = np.asarray(weights, dtype=np.float64)
    order = np.lexsort((edges[:, 1], edges[:, 0], weights))
    us = edges[order, 0].tolist()
    vs = edges[order, 1].tolist()
    ws = weights[order].tolist()

    ds = _DisjointSet(n_vertices)
    find, size, internal = ds.find, ds.size, ds.internal
    for u, v, w in zip(us, vs, ws):
        a, b = find(u), find(v)
        if a == b:
            continue
        if w <= min(internal[a] + k / size[a], internal[b] + k / size[b]):
            ds.union(a, b, w)

    if min_size > 1:
        for u, v, w in zip(us, vs, ws):
            a, b = find(u), find(v)
            if a != b and (size[a] < min_size or size[b] < min_size):
                ds.union(a, b, w)

    return _compact_labels(np.array([find(i) for i in range(n_vertices)], dtype=np.int64))


def segment_mesh(vertices, faces, k: float = 0.02, min_size: int = 50) -> SuperpointPartition:
    """Superpoints over the vertex adjacency graph weighted by ``1 - n_u . n_v``."""
    if faces is None or len(faces) == 0:
        raise DegenerateMesh("mesh has no faces")
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise DegenerateMesh("face indices out of range")
    normals = vertex_normals(vertices, faces)
    edges = mesh_edges(faces)
    w = 1.0 - np.einsum("ij,ij->i", normals[edges[:, 0]], normals[edges[:, 1]])
    w = np.clip(w, 0.0, 2.0)
    labels = segment_graph(len(vertices), edges, w, k, min_size)
    return SuperpointPartition(labels)


def _pool_sums(features, valid, part: SuperpointPartition):
    member = valid & (part.assignment >= 0)
    seg = part.assignment[member]
    sums = np.zeros((part.n_segments, features.shape[1]))
    np.add.at(sums, seg, features[member])
    counts = np.bincount(seg, minlength=part.n_segments)
    return sums, counts


def superpoint_pool(f, part: SuperpointPartition):
    """Mean of each segment's valid member rows, L2-normalised.

    Returns ``(pooled [L, C], segment_valid [L])``; segments with no valid
    member are zero rows flagged ``False``.
    """
    if not isinstance(f, PointFeatureSet):
        f = PointFeatureSet(np.asarray(f, dtype=np.float64), np.ones(len(f), dtype=bool))
    if len(f) != len(part):
        raise ShapeMismatch(f"{len(f)} feature rows vs partition over {len(part)} points")
    sums, counts = _pool_sums(f.features, f.valid, part)
    means = sums / np.maximum(counts, 1)[:, None]
    pooled, degenerate = l2_normalize_rows(means)
    seg_valid = (counts > 0) & ~degenerate
    pooled[~seg_valid] = 0.0
    return pooled, seg_valid


def superpoint_broadcast(pooled, part: SuperpointPartition, segment_valid=None) -> PointFeatureSet:
    """Give every point its segment's pooled row."""
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.shape[0] != part.n_segments:
        raise ShapeMismatch(f"{pooled.shape[0]} pooled rows vs {part.n_segments} segments")
    if segment_valid is None:
        segment_valid = np.ones(part.n_segments, dtype=bool)
    segment_valid = np.asarray(segment_valid, dtype=bool)
    a = part.assignment
    inside = a >= 0
    feats = np.zeros((len(a), pooled.shape[1]))
    feats[inside] = pooled[a[inside]]
    valid = np.zeros(len(a), dtype=bool)
    valid[inside] = segment_valid[a[inside]]
    feats[~valid] = 0.0
    return PointFeatureSet(feats, valid)
