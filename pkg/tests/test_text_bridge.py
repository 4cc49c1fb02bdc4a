import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ovfuse.errors import EmbeddingCountMismatch, InvalidSpan
from ovfuse.tensor import write_pgm, write_tensor
from ovfuse.text_bridge import (MaskLabelSet, caption_substitute, last_token_span, load_mask_set,
                                rasterize_mask_features, substitute_label)


def test_wooden_bench_becomes_table():
    assert caption_substitute("a wooden bench", (9, 14), "table") == "a wooden table"


def test_span_covering_caption_returns_label():
    assert caption_substitute("bench", (0, 5), "sofa") == "sofa"


def test_multibyte_caption_uses_byte_offsets():
    cap = "a café chair"
    start = len("a café ".encode("utf-8"))
    assert caption_substitute(cap, (start, start + 5), "stool") == "a café stool"
    with pytest.raises(InvalidSpan):
        caption_substitute(cap, (5, 6), "x")  # cuts through "é"


@pytest.mark.parametrize("span", [(3, 3), (-1, 2), (2, 99), (5, 2)])
def test_invalid_spans(span):
    with pytest.raises(InvalidSpan):
        caption_substitute("a red sofa", span, "bed")


@given(st.text(min_size=1, max_size=20), st.data())
def test_substituting_span_text_is_identity(caption, data):
    raw = caption.encode("utf-8")
    # spans on character boundaries
    cuts = sorted({len(caption[:i].encode("utf-8")) for i in range(len(caption) + 1)})
    start = data.draw(st.sampled_from(cuts[:-1]))
    end = data.draw(st.sampled_from([c for c in cuts if c > start]))
    text = raw[start:end].decode("utf-8")
    assert caption_substitute(caption, (start, end), text) == caption


def test_fallback_replaces_last_token():
    assert last_token_span("a small lamp") == (8, 12)
    assert substitute_label("a small lamp", "vase") == "a small vase"


def _rect(h, w, r0, r1, c0, c1):
    m = np.zeros((h, w), dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


def test_full_frame_mask():
    e = np.array([[0.2, -0.5, 1.0]])
    f, cov = rasterize_mask_features(MaskLabelSet([np.ones((2, 3), bool)], ["x"], embeddings=e), 3, 2, 3)
    assert cov.all()
    np.testing.assert_array_equal(f, np.broadcast_to(e[0], (2, 3, 3)))


def test_overlap_last_wins():
    a, b = _rect(4, 4, 0, 3, 0, 3), _rect(4, 4, 1, 4, 1, 4)
    e = np.eye(2)
    f, cov = rasterize_mask_features(MaskLabelSet([a, b], ["a", "b"], embeddings=e), 4, 4, 2)
    np.testing.assert_array_equal(f[1, 1], [0, 1])
    np.testing.assert_array_equal(f[0, 0], [1, 0])
    assert not cov[0, 3] and not f[0, 3].any()


def test_random_rectangles_against_pixel_loop():
    rng = np.random.default_rng(5)
    for _ in range(20):
        masks = []
        for _ in range(3):
            r0, c0 = rng.integers(0, 4, 2)
            masks.append(_rect(4, 4, r0, rng.integers(r0 + 1, 5), c0, rng.integers(c0 + 1, 5)))
        e = rng.normal(size=(3, 2))
        f, cov = rasterize_mask_features(MaskLabelSet(masks, ["a", "b", "c"], embeddings=e), 4, 4, 2)
        for r in range(4):
            for c in range(4):
                owners = [j for j in range(3) if masks[j][r, c]]
                if owners:
                    np.testing.assert_array_equal(f[r, c], e[max(owners)])
                else:
                    assert not cov[r, c] and not f[r, c].any()


def test_disjoint_masks_order_free_and_idempotent():
    masks = [_rect(5, 5, 0, 2, 0, 5), _rect(5, 5, 3, 5, 0, 2)]
    e = np.array([[1.0, 0.0], [0.0, 1.0]])
    f1, _ = rasterize_mask_features(MaskLabelSet(masks, ["a", "b"], embeddings=e), 5, 5, 2)
    f2, _ = rasterize_mask_features(MaskLabelSet(masks[::-1], ["b", "a"], embeddings=e[::-1]), 5, 5, 2)
    np.testing.assert_array_equal(f1, f2)
    f3, _ = rasterize_mask_features(MaskLabelSet(masks, ["a", "b"], embeddings=e), 5, 5, 2)
    np.testing.assert_array_equal(f1, f3)


def test_embedding_count_mismatch():
    ms = MaskLabelSet([np.ones((2, 2), bool)] * 2, ["a", "b"], embeddings=np.ones((1, 3)))
    with pytest.raises(EmbeddingCountMismatch):
        rasterize_mask_features(ms, 2, 2, 3)


def test_manifest_loading(tmp_path):
    write_pgm(_rect(3, 3, 0, 2, 0, 2), tmp_path / "m0.pgm")
    write_tensor(np.ones((1, 4), np.float32), tmp_path / "e.ovt")
    (tmp_path / "manifest.json").write_text(json.dumps({
        "embeddings": "e.ovt",
        "masks": [{"mask": "m0.pgm", "label": "table", "caption": "a wooden bench", "noun_span": [9, 14]}],
    }))
    ms = load_mask_set(tmp_path / "manifest.json")
    assert ms.substituted_captions() == ["a wooden table"]
    f, cov = rasterize_mask_features(ms, 3, 3, 4)
    assert cov.sum() == 4
