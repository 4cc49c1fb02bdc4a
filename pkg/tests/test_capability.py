import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from ovfuse.capability import (CapabilityTable, aggregate_attention, binarize_coarse_mask, build_capability,
                               load_capability_corpus, mask_iou, sample_prompt_points, synthesis_prompt)
from ovfuse.errors import AbsentClassScore, EmptyMask, ShapeMismatch, ZeroMap
from ovfuse.tensor import write_pgm

from oracles import aggregate_attention_loop, capability_loop, iou_loop


def test_single_map_normalised():
    out = aggregate_attention(np.array([[[[1.0, 2.0], [4.0, 2.0]]]]))
    np.testing.assert_allclose(out, [[0.25, 0.5], [1.0, 0.5]])


def test_scaled_copies_aggregate_to_one_map():
    m = np.array([[1.0, 3.0], [0.5, 2.0]])
    out = aggregate_attention(np.stack([m, 7 * m])[None])
    np.testing.assert_allclose(out, m / 3.0)


def test_random_stack_against_loop():
    rng = np.random.default_rng(0)
    stack = rng.random((2, 3, 4, 4))
    np.testing.assert_allclose(aggregate_attention(stack), aggregate_attention_loop(stack), atol=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.integers(0, 1), st.integers(0, 2), st.floats(0.01, 100.0))
def test_aggregate_invariant_to_rescaling_one_map(seed, y, z, c):
    stack = np.random.default_rng(seed).random((2, 3, 3, 4)) + 0.01
    scaled = stack.copy()
    scaled[y, z] *= c
    np.testing.assert_allclose(aggregate_attention(scaled), aggregate_attention(stack), atol=1e-12)
    assert 0.0 <= aggregate_attention(stack).min() and aggregate_attention(stack).max() <= 1.0 + 1e-12


def test_zero_map_rejected():
    stack = np.ones((1, 2, 2, 2))
    stack[0, 1] = 0.0
    with pytest.raises(ZeroMap):
        aggregate_attention(stack)


def test_binarize_examples():
    np.testing.assert_array_equal(binarize_coarse_mask(np.array([[0.2, 0.6], [1.0, 0.4]]), 0.5),
                                  [[False, True], [True, False]])
    assert binarize_coarse_mask(np.full((3, 3), 0.7), 0.9).all()
    # a value of exactly threshold * max stays in
    assert binarize_coarse_mask(np.array([[0.5, 1.0]]), 0.5).all()


def test_prompt_points_simple_cases():
    m = np.zeros((5, 5), dtype=bool)
    m[3, 1] = True
    np.testing.assert_array_equal(sample_prompt_points(m, 3), [[3, 1]])
    np.testing.assert_array_equal(sample_prompt_points(np.ones((5, 5), bool), 1), [[2, 2]])
    with pytest.raises(EmptyMask):
        sample_prompt_points(np.zeros((2, 2), bool))


def test_two_blob_farthest_pair():
    m = np.zeros((8, 8), dtype=bool)
    m[0:2, 0:2] = True
    m[5:8, 5:8] = True
    pts = sample_prompt_points(m, 2, seed=0)
    pix = np.argwhere(m)
    first = pix[np.argmin(((pix - pix.mean(0)) ** 2).sum(1))]
    np.testing.assert_array_equal(pts[0], first)
    # exhaustive: the second point is as far from the first as any mask pixel
    d = ((pix - first) ** 2).sum(1)
    assert ((pts[1] - first) ** 2).sum() == d.max()
    assert all(m[r, c] for r, c in pts)


@settings(max_examples=25)
@given(hnp.arrays(bool, (6, 6)), st.integers(1, 5), st.integers(0, 100))
def test_prompt_points_inside_and_deterministic(mask, k, seed):
    if not mask.any():
        return
    a = sample_prompt_points(mask, k, seed)
    assert len(a) == min(k, int(mask.sum()))
    assert all(mask[r, c] for r, c in a)
    assert len({tuple(p) for p in a.tolist()}) == len(a)
    np.testing.assert_array_equal(a, sample_prompt_points(mask, k, seed))


def test_iou_examples():
    a = np.array([[1, 1], [0, 0]], bool)
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, ~a) == 0.0
    assert mask_iou(a, np.array([[1, 0], [1, 0]], bool)) == pytest.approx(1 / 3)
    assert mask_iou(np.zeros((2, 2), bool), np.zeros((2, 2), bool)) == 1.0
    with pytest.raises(ShapeMismatch):
        mask_iou(np.zeros((2, 2)), np.zeros((2, 3)))


@given(hnp.arrays(bool, (4, 5)), hnp.arrays(bool, (4, 5)))
def test_iou_symmetric_and_matches_loop(a, b):
    assert mask_iou(a, b) == mask_iou(b, a)
    assert mask_iou(a, b) == pytest.approx(iou_loop(a, b), abs=1e-12)
    if (a | b).any():
        assert (mask_iou(a, b) == 1.0) == bool(np.array_equal(a, b))


def test_capability_examples():
    m = np.eye(3, dtype=bool)
    t = build_capability("A", {"x": [(m, m)], "y": [(m, m), (m, ~m)], "z": []}, ["x", "y", "z"])
    assert t.score(0) == 1.0 and t.score(1) == 0.5
    assert not t.present[2]
    with pytest.raises(AbsentClassScore):
        t.score(2)
    with pytest.raises(AbsentClassScore):
        t.lookup([0, 2])


def test_capability_random_against_loop():
    rng = np.random.default_rng(2)
    groups = [[(rng.random((6, 6)) < 0.4, rng.random((6, 6)) < 0.4) for _ in range(5)] for _ in range(4)]
    t = build_capability("B", groups)
    np.testing.assert_allclose(t.scores, capability_loop(groups), atol=1e-12)


def test_capability_order_free():
    rng = np.random.default_rng(4)
    pairs = [(rng.random((5, 5)) < 0.5, rng.random((5, 5)) < 0.5) for _ in range(6)]
    a = build_capability("A", [pairs, pairs[:2]])
    b = build_capability("A", [pairs[::-1], pairs[:2][::-1]])
    np.testing.assert_allclose(a.scores, b.scores, atol=1e-15)


def test_table_json_roundtrip(tmp_path):
    t = CapabilityTable("A", ["chair", "table", "lamp"], [0.3, 0.9, np.nan], [20, 20, 0])
    t.save(tmp_path / "A.json")
    data = json.loads((tmp_path / "A.json").read_text())
    assert data["model_id"] == "A" and data["scores"]["lamp"] is None
    back = CapabilityTable.load(tmp_path / "A.json", ["chair", "table", "lamp"])
    np.testing.assert_array_equal(back.present, [True, True, False])
    np.testing.assert_allclose(back.scores[:2], [0.3, 0.9])


def test_table_rejects_scores_outside_unit_interval():
    with pytest.raises(ValueError):
        CapabilityTable("A", ["a", "b"], [1.2, 0.5], [1, 1])


def test_corpus_manifest(tmp_path):
    m = np.zeros((4, 4), bool)
    m[:2] = True
    write_pgm(m, tmp_path / "p.pgm")
    write_pgm(m, tmp_path / "good.pgm")
    write_pgm(np.zeros_like(m), tmp_path / "bad.pgm")
    (tmp_path / "c.json").write_text(json.dumps({"A": {"chair": [
        {"pseudo_mask": "p.pgm", "model_mask": "good.pgm"},
        {"pseudo_mask": "p.pgm", "model_mask": "bad.pgm"}]}}))
    corpus = load_capability_corpus(tmp_path / "c.json")
    assert build_capability("A", corpus["A"], ["chair"]).score(0) == 0.5


def test_synthesis_prompt():
    assert synthesis_prompt("sofa") == "a good photo of sofa"
