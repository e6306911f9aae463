import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iid.blender import compose_instructions
from iid.disentangle import build_disentangle_mask, mask_stats, masked_softmax
from iid.errors import ShapeMismatch
from iid.layout import build_layout
from iid.maskgen import overlap_counts


def _pix(*cells, n=4):
    m = np.zeros(n, dtype=bool)
    m[list(cells)] = True
    return m.reshape(2, 2)


def test_two_by_two_enumeration():
    # [I0: 0-1, I1: 2-3, image: 4-7]; M0 = pixel 0, M1 = pixel 3.
    layout = build_layout("flux", [2, 2], n_z=4)
    allowed = build_disentangle_mask(layout, [_pix(0), _pix(3)])
    expected = np.ones((8, 8), dtype=bool)
    expected[0:2, 7] = False  # instruction 0 cannot see region 1
    expected[2:4, 4] = False  # instruction 1 cannot see region 0
    expected[0:2, 2:4] = expected[2:4, 0:2] = False  # instruction blocks
    expected[4, 7] = expected[7, 4] = False  # region to region
    expected[7, 0:2] = False  # region 1 does not read instruction 0
    expected[4, 2:4] = False  # region 0 does not read instruction 1
    np.testing.assert_array_equal(allowed, expected)


def test_full_overlap_leaves_only_instruction_blocking():
    layout = build_layout("flux", [2, 3], n_z=4)
    m = _pix(0, 1)
    allowed = build_disentangle_mask(layout, [m, m.copy()])
    expected = np.ones((9, 9), dtype=bool)
    expected[0:2, 2:5] = expected[2:5, 0:2] = False
    np.testing.assert_array_equal(allowed, expected)
    open_ = build_disentangle_mask(layout, [m, m.copy()], block_cross_instruction=False)
    assert open_.all()


def test_single_instruction_is_unrestricted():
    layout = build_layout("flux", [3], n_z=4)
    assert build_disentangle_mask(layout, [_pix(0, 2)]).all()


def test_unconditional_prompt_only_gets_region_rule():
    layout = build_layout("flux", [3], n_z=4, instruction_ids=[None])
    allowed = build_disentangle_mask(layout, [_pix(0), _pix(3)])
    expected = np.ones((7, 7), dtype=bool)
    expected[3, 6] = expected[6, 3] = False
    np.testing.assert_array_equal(allowed, expected)


def test_mask_size_mismatch():
    layout = build_layout("flux", [1, 1], n_z=9)
    with pytest.raises(ShapeMismatch):
        build_disentangle_mask(layout, [_pix(0), _pix(1)])


def test_masked_softmax_examples():
    logits = np.random.default_rng(0).normal(size=(2, 4, 4))
    plain = np.exp(logits - logits.max(-1, keepdims=True))
    plain /= plain.sum(-1, keepdims=True)
    np.testing.assert_allclose(masked_softmax(logits, np.ones((4, 4), bool)), plain, rtol=1e-12)
    np.testing.assert_allclose(masked_softmax(logits), plain, rtol=1e-12)
    np.testing.assert_array_equal(masked_softmax(logits, np.eye(4, dtype=bool))[0], np.eye(4))
    np.testing.assert_array_equal(
        masked_softmax(np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([[1, 0], [1, 1]], bool))[0],
        [1.0, 0.0],
    )
    with pytest.raises(ShapeMismatch):
        masked_softmax(logits, np.ones((3, 3), bool))


def test_mask_stats():
    s = mask_stats(np.eye(3, dtype=bool))
    assert s == {"size": 3, "allowed": 3, "forbidden": 6, "allowed_fraction": 1 / 3}


def _random_setup(seed, kind, n):
    rng = np.random.default_rng(seed)
    masks = list(rng.uniform(size=(n, 4, 4)) > 0.55)
    for m in masks:
        m.flat[rng.integers(16)] = True
    lens = [int(x) for x in rng.integers(1, 4, size=n)]
    order = [int(i) for i in rng.permutation(n)]
    seqs = [list(range(k)) for k in lens]
    n_v = 16 if kind == "omni" else 0
    _, layout, _ = compose_instructions(seqs, order, kind, n_z=16, n_v=n_v)
    return masks, layout


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["flux", "omni"]), st.integers(2, 4))
def test_visibility_soundness_single_layer(seed, kind, n):
    """Region outputs ignore values at another instruction's tokens and exclusive cells."""
    masks, layout = _random_setup(seed, kind, n)
    counts = overlap_counts(masks)
    allowed = build_disentangle_mask(layout, masks, counts, kind == "flux")
    rng = np.random.default_rng(seed + 1)
    L = layout.total_len
    logits = rng.normal(size=(2, L, L))
    v = rng.normal(size=(2, L, 3))
    attn = masked_softmax(logits, allowed)
    assert np.all(attn[:, ~allowed] == 0)
    np.testing.assert_allclose(attn.sum(-1), 1.0, atol=1e-12)
    base = attn @ v
    img0 = layout.noisy.start
    for i in range(n):
        seg = layout.instruction_segment(i)
        hidden = [*range(seg.start, seg.stop)]
        hidden += [img0 + c for c in np.flatnonzero(masks[i].ravel() & (counts.ravel() == 1))]
        v2 = v.copy()
        v2[:, hidden] += rng.normal(size=(2, len(hidden), 3)) * 100
        out = attn @ v2
        for j in range(n):
            if j == i:
                continue
            q = img0 + np.flatnonzero((masks[j] & ~masks[i]).ravel())
            np.testing.assert_array_equal(out[:, q], base[:, q])


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["flux", "omni"]), st.integers(2, 4))
def test_mask_deterministic_symmetric_with_diagonal(seed, kind, n):
    masks, layout = _random_setup(seed, kind, n)
    a = build_disentangle_mask(layout, masks)
    b = build_disentangle_mask(layout, [m.copy() for m in masks])
    np.testing.assert_array_equal(a, b)
    assert a.diagonal().all()
    # Region-to-region blocking is symmetric on cells covered by a single mask.
    single = layout.noisy.start + np.flatnonzero(overlap_counts(masks).ravel() == 1)
    sub = a[np.ix_(single, single)]
    np.testing.assert_array_equal(sub, sub.T)
