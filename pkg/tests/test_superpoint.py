import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ovfuse.errors import DegenerateMesh, ShapeMismatch
from ovfuse.geometry import PointFeatureSet
from ovfuse.superpoint import (SuperpointPartition, identity_partition, mesh_edges, segment_mesh,
                               superpoint_broadcast, superpoint_pool, vertex_normals)

from oracles import components_loop, pool_loop


def _grid(n, to_xyz):
    """``n x n`` vertex grid on the unit square mapped through ``to_xyz``, with its triangles."""
    a, b = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n), indexing="ij")
    verts = np.array([to_xyz(s, t) for s, t in zip(a.ravel(), b.ravel())])
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    v00 = (i * n + j).ravel()
    faces = np.concatenate([np.stack([v00, v00 + n, v00 + 1], 1), np.stack([v00 + n, v00 + n + 1, v00 + 1], 1)])
    return verts, faces


def _two_quads(n=6):
    """Floor quad (z=0) and wall quad (x=0) sharing the edge x=z=0."""
    v1, f1 = _grid(n, lambda s, t: (s, t, 0.0))
    v2, f2 = _grid(n, lambda s, t: (0.0, t, s))
    # wall row s=0 duplicates the floor row s=0; reuse those vertices
    keep = np.arange(n, n * n)
    remap = np.full(n * n, -1)
    remap[:n] = np.arange(n)
    remap[keep] = len(v1) + np.arange(len(keep))
    verts = np.concatenate([v1, v2[keep]])
    faces = np.concatenate([f1, remap[f2]])
    side = np.r_[np.zeros(len(v1), int), np.ones(len(keep), int)]
    side[:n] = -1  # seam
    return verts, faces, side


def test_two_quads_split_at_sharp_edge():
    verts, faces, side = _two_quads()
    part = segment_mesh(verts, faces, k=0.02, min_size=10)
    assert part.n_segments == 2
    a = part.assignment
    assert len(set(a[side == 0])) == 1 and len(set(a[side == 1])) == 1
    assert a[side == 0][0] != a[side == 1][0]
    assert len(set(a[side == -1])) == 1  # the seam joins one side whole

    # oracle: components after thresholding weights; the seam is its own component before the size pass
    normals = vertex_normals(verts, faces)
    edges = mesh_edges(faces)
    w = 1 - np.einsum("ij,ij->i", normals[edges[:, 0]], normals[edges[:, 1]])
    comp = np.array(components_loop(len(verts), edges.tolist(), (w < 0.1).tolist()))
    assert len(set(comp)) == 3
    off_seam = side >= 0
    for s in (0, 1):
        assert len(set(comp[side == s])) == 1
    # same grouping away from the seam
    pairs = {(c, p) for c, p in zip(comp[off_seam], a[off_seam])}
    assert len(pairs) == 2


def test_flat_plane_is_one_segment():
    verts, faces = _grid(7, lambda s, t: (s, t, 0.0))
    assert segment_mesh(verts, faces, k=0.02, min_size=1).n_segments == 1


def test_large_min_size_forces_single_segment():
    verts, faces, _ = _two_quads()
    assert segment_mesh(verts, faces, k=0.02, min_size=1000).n_segments == 1


def test_no_faces_is_degenerate():
    with pytest.raises(DegenerateMesh):
        segment_mesh(np.zeros((3, 3)), np.zeros((0, 3), int))


def _bumpy(seed, n=8):
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=0.08, size=(n, n))
    return _grid(n, lambda s, t: (s, t, z[int(round(s * (n - 1))), int(round(t * (n - 1)))]))


def _same_partition(a, b):
    # equal up to relabelling
    return len({(x, y) for x, y in zip(a, b)}) == len(set(a)) == len(set(b))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_vertex_permutation_only_relabels(seed):
    verts, faces = _bumpy(seed)
    perm = np.random.default_rng(seed + 1).permutation(len(verts))
    inv = np.argsort(perm)
    base = segment_mesh(verts, faces, k=0.05, min_size=3)
    moved = segment_mesh(verts[perm], inv[faces], k=0.05, min_size=3)
    assert _same_partition(base.assignment, moved.assignment[inv])
    # partition invariants
    assert base.sizes.sum() == len(verts) and base.sizes.min() >= 1


def test_identity_partition():
    p = identity_partition(5)
    assert p.n_segments == 5 and p.assignment.tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        identity_partition(0)


def test_partition_validation_and_io(tmp_path):
    with pytest.raises(ShapeMismatch):
        SuperpointPartition(np.array([0, 3]), 2)
    with pytest.raises(ValueError):
        SuperpointPartition(np.array([0, 0]), 2)  # segment 1 empty
    p = SuperpointPartition(np.array([1, 0, -1, 1]))
    p.save(tmp_path / "sp.ovt")
    q = SuperpointPartition.load(tmp_path / "sp.ovt")
    assert q.assignment.tolist() == [1, 0, -1, 1] and q.sizes.tolist() == [1, 2]


def test_pool_examples():
    part = SuperpointPartition(np.array([0, 0, 1, 1]))
    f = np.array([[0.6, 0.8], [0.6, 0.8], [1.0, 0.0], [0.0, 1.0]])
    pooled, ok = superpoint_pool(f, part)
    np.testing.assert_allclose(pooled, [[0.6, 0.8], [0.70710678, 0.70710678]], atol=1e-8)
    assert ok.all()
    x = np.random.default_rng(0).normal(size=(4, 3))
    pooled, _ = superpoint_pool(x, identity_partition(4))
    np.testing.assert_allclose(pooled, x / np.linalg.norm(x, axis=1, keepdims=True))


def test_pool_skips_invalid_members():
    part = SuperpointPartition(np.array([0, 0, 1]))
    f = PointFeatureSet(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]), np.array([True, False, False]))
    pooled, ok = superpoint_pool(f, part)
    np.testing.assert_allclose(pooled[0], [1.0, 0.0])
    assert ok.tolist() == [True, False] and not pooled[1].any()
    back = superpoint_broadcast(pooled, part, ok)
    assert back.valid.tolist() == [True, True, False]


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_pool_and_broadcast_against_loops(seed):
    rng = np.random.default_rng(seed)
    n, c, l = 12, 3, 4
    assign = rng.integers(0, l, n)
    assign[:l] = np.arange(l)
    part = SuperpointPartition(assign, l)
    x = rng.normal(size=(n, c))
    valid = rng.random(n) < 0.8
    x[~valid] = 0.0
    pooled, ok = superpoint_pool(PointFeatureSet(x, valid), part)
    exp, exp_ok = pool_loop(x, valid, assign, l)
    np.testing.assert_allclose(pooled, exp, atol=1e-12)
    np.testing.assert_array_equal(ok, exp_ok)

    back = superpoint_broadcast(pooled, part, ok)
    for i in range(n):
        np.testing.assert_array_equal(back.features[i], pooled[assign[i]] if ok[assign[i]] else 0.0)
    # pooling the broadcast gives the pooled rows back
    again, _ = superpoint_pool(back, part)
    np.testing.assert_allclose(again[ok], pooled[ok], atol=1e-6)
