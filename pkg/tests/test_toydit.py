from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from iid.errors import ConfigError, InvalidLayout, ShapeMismatch, StepUnderflow
from iid.io import read_tensor
from iid.layout import Kind
from iid.toydit import (
    Conditioning,
    DenoiseState,
    LayerWeights,
    Prompt,
    ToyDiT,
    ToyDiTConfig,
    diffusion_loss,
    attention_layer,
    embed_sequence,
    init_weights,
    layer_norm,
    reverse_step,
    timestep_embedding,
    tokenize,
    uniform_schedule,
)
from oracles import loop_attention

SMALL = ToyDiTConfig(layers=2, heads=2, dim=16, height=4, width=4, channels=3, vocab=32)
GOLDEN = Path(__file__).parent / "data" / "golden_eps.atns"


def _fields(w):
    return [w.tokens, w.signatures, w.text_pos, w.image_pos, w.patch, w.cond, w.time, w.out] + [
        a for lw in w.layers for a in (lw.wq, lw.wk, lw.wv, lw.wo, lw.w1, lw.w2)
    ]


def test_weights_deterministic_per_seed():
    a, b = init_weights(SMALL), init_weights(SMALL)
    for x, y in zip(_fields(a), _fields(b)):
        np.testing.assert_array_equal(x, y)
    c = init_weights(replace(SMALL, seed=1))
    assert not np.array_equal(a.tokens, c.tokens)


def test_config_errors():
    with pytest.raises(ConfigError):
        ToyDiTConfig(dim=10, heads=4)
    with pytest.raises(ConfigError):
        ToyDiTConfig(guidance=0.5)
    with pytest.raises(ConfigError):
        ToyDiTConfig(layers=0)


def test_tokenize():
    ids = tokenize("Make it Red", 32)
    assert ids == tokenize("make it red", 32)
    assert len(ids) == 3 and all(1 <= i < 32 for i in ids)
    assert tokenize([4, 5], 32) == [4, 5]


def test_flux_zero_condition_gives_patch_embedding():
    w = init_weights(SMALL)
    z = np.random.default_rng(0).normal(size=(4, 4, 3))
    prompt = Prompt.single([1, 2], SMALL)
    x = embed_sequence(w, SMALL, prompt, np.zeros_like(z), 0, 10, z)
    expected = z.reshape(16, 3).astype(np.float32) @ w.patch + w.image_pos
    expected = expected + timestep_embedding(0, 10, 16).astype(np.float32) @ w.time
    np.testing.assert_array_equal(x[2:], expected)
    assert x.shape == (2 + 16, 16)


def test_omni_sequence_length():
    cfg = replace(SMALL, kind=Kind.OMNI)
    prompt = Prompt.single([1, 2, 3], cfg)
    z = np.zeros((4, 4, 3))
    x = embed_sequence(init_weights(cfg), cfg, prompt, z, 3, 10, z)
    assert x.shape[0] == 3 + 16 + 1 + 16 == prompt.layout.total_len


def test_empty_instruction_rejected():
    with pytest.raises(InvalidLayout):
        Prompt.single([], SMALL)


def test_layout_kind_mismatch():
    prompt = Prompt.single([1], replace(SMALL, kind=Kind.OMNI))
    z = np.zeros((4, 4, 3))
    with pytest.raises(InvalidLayout):
        embed_sequence(init_weights(SMALL), SMALL, prompt, z, 0, 10, z)


def _plain_layer(wq, wk, wv, d):
    return LayerWeights(wq, wk, wv, np.eye(d, dtype=np.float32),
                        np.zeros((d, 4 * d), np.float32), np.zeros((4 * d, d), np.float32))


def test_attention_layer_hand_sized_matches_loop():
    x = np.array([[1.0, -1.0], [0.5, 2.0], [-3.0, 0.0]], dtype=np.float32)
    eye = np.eye(2, dtype=np.float32)
    lw = _plain_layer(eye, eye * 2, eye, 2)
    out, attn, _ = attention_layer(x, lw, 1, capture=True)
    a = layer_norm(x.astype(np.float64))
    ref, w = loop_attention(a, eye, 2 * eye, eye, 1)
    np.testing.assert_allclose(attn, w, atol=1e-6)
    np.testing.assert_allclose(out, x + ref, atol=1e-5)


def test_attention_layer_random_matches_loop():
    rng = np.random.default_rng(4)
    d, n = 8, 5
    x = rng.normal(size=(n, d)).astype(np.float32)
    wq, wk, wv = (rng.normal(size=(3, d, d)) / np.sqrt(d)).astype(np.float32)
    out, attn, _ = attention_layer(x, _plain_layer(wq, wk, wv, d), 2, capture=True)
    ref, w = loop_attention(layer_norm(x.astype(np.float64)), wq, wk, wv, 2)
    np.testing.assert_allclose(attn, w, atol=1e-5)
    np.testing.assert_allclose(out, x + ref, atol=1e-4)


def test_attention_layer_width_mismatch():
    lw = init_weights(SMALL).layers[0]
    with pytest.raises(ShapeMismatch):
        attention_layer(np.zeros((3, 8), np.float32), lw, 2)


def test_all_true_mask_equals_no_mask():
    lw = init_weights(SMALL).layers[0]
    x = np.random.default_rng(1).normal(size=(7, 16)).astype(np.float32)
    a, _, _ = attention_layer(x, lw, 2)
    b, _, _ = attention_layer(x, lw, 2, mask=np.ones((7, 7), bool))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind", [Kind.FLUX, Kind.OMNI])
def test_captured_rows_are_stochastic(kind):
    cfg = replace(SMALL, kind=kind)
    model = ToyDiT(cfg)
    z = np.random.default_rng(2).normal(size=(4, 4, 3))
    state = DenoiseState(z, 10, uniform_schedule(10))
    cond = Conditioning(z * 0.5, Prompt.single([1, 2, 3], cfg), Prompt.null(cfg))
    for layer in range(cfg.layers):
        model.predict_noise(state, cond, layer)
        attn = state.captured[(layer, 10)]
        L = cond.prompt.layout.total_len
        assert attn.shape[0] == cfg.heads and attn.shape[2] == L
        assert np.abs(attn.sum(-1) - 1).max() <= 1e-6


def _conditioning(cfg, seed=3):
    rng = np.random.default_rng(seed)
    z, c = rng.normal(size=(2, cfg.height, cfg.width, cfg.channels))
    return z, Conditioning(c, Prompt.single([3, 5, 9], cfg), Prompt.null(cfg))


def test_guidance_one_is_conditional_branch():
    model = ToyDiT(SMALL)
    z, cond = _conditioning(SMALL)
    eps = model.predict_noise(DenoiseState(z, 4, uniform_schedule(10)), cond)
    direct, _ = model.eps_branch(cond.prompt, z, 4, 10, cond.cond_latent, None, None, {})
    np.testing.assert_array_equal(eps, direct)


def test_predict_noise_deterministic():
    cfg = replace(SMALL, guidance=5.0)
    z, cond = _conditioning(cfg)
    a = ToyDiT(cfg).predict_noise(DenoiseState(z, 4, uniform_schedule(10)), cond)
    b = ToyDiT(cfg).predict_noise(DenoiseState(z.copy(), 4, uniform_schedule(10)), cond)
    np.testing.assert_array_equal(a, b)


def test_predict_noise_matches_golden():
    cfg = ToyDiTConfig(layers=2, heads=2, dim=16, height=4, width=4, channels=3, vocab=32,
                       seed=7, guidance=3.0)
    rng = np.random.default_rng(7)
    z = rng.standard_normal((4, 4, 3))
    c = rng.standard_normal((4, 4, 3))
    cond = Conditioning(c, Prompt.single([3, 5, 9], cfg), Prompt.null(cfg))
    eps = ToyDiT(cfg).predict_noise(DenoiseState(z, 5, uniform_schedule(10)), cond)
    np.testing.assert_allclose(eps, read_tensor(GOLDEN), rtol=1e-5, atol=1e-5)


def test_omni_cache_reduces_queries_without_changing_prefix():
    cfg = replace(SMALL, kind=Kind.OMNI)
    model = ToyDiT(cfg)
    z, cond = _conditioning(cfg)
    state = DenoiseState(z, 10, uniform_schedule(10))
    model.predict_noise(state, cond, 0)
    state = reverse_step(state, np.zeros_like(z))
    model.predict_noise(state, cond, 0)
    L = cond.prompt.layout.total_len
    assert state.captured[(0, 10)].shape == (2, L, L)
    assert state.captured[(0, 9)].shape == (2, 1 + 16, L)


def test_reverse_step_examples():
    z = np.ones((2, 2, 1))
    s = reverse_step(DenoiseState(z, 3, uniform_schedule(3)), np.zeros_like(z))
    np.testing.assert_array_equal(s.z, z)
    assert s.t == 2
    s = reverse_step(DenoiseState(z, 1, np.array([1.0])), np.full_like(z, 0.5))
    np.testing.assert_array_equal(s.z, 0.5)
    with pytest.raises(StepUnderflow):
        reverse_step(s, np.zeros_like(z))
    with pytest.raises(ShapeMismatch):
        reverse_step(DenoiseState(z, 1, np.array([1.0])), np.zeros((3,)))


@pytest.mark.parametrize("T", [1, 7, 30])
def test_reverse_steps_telescope(T):
    z = np.random.default_rng(T).normal(size=(3, 3, 2))
    schedule = np.random.default_rng(T + 1).uniform(0.1, 1, size=T)
    state = DenoiseState(z, T, schedule / schedule.sum())
    c = 0.37
    while state.t > 0:
        state = reverse_step(state, np.full_like(z, c))
    np.testing.assert_allclose(state.z, z - c, atol=1e-12)


def test_diffusion_loss():
    a = np.random.default_rng(0).normal(size=(3, 3, 2))
    assert diffusion_loss(a, a) == 0
    assert diffusion_loss(a, a + 0.3) == pytest.approx(0.09)
    b = np.random.default_rng(1).normal(size=(3, 3, 2))
    flat = [(x - y) ** 2 for x, y in zip(a.ravel().tolist(), b.ravel().tolist())]
    assert diffusion_loss(a, b) == pytest.approx(sum(flat) / len(flat), rel=1e-12)
    with pytest.raises(ShapeMismatch):
        diffusion_loss(a, b[:2])
