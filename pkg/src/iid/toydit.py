"""A small seeded diffusion transformer that runs the whole editing pipeline.

The model is untrained: weights come from a seeded generator. It exists so that
attention capture, mask generation, blending and masked denoising can be
exercised end to end with exact, reproducible numerics.

Token sequences follow the two concatenation schemes in :mod:`iid.layout`.
FLUX adds the condition latent and the timestep embedding onto the image
tokens. OMNI carries them as separate tokens; the instruction and condition
prefix is run once with full queries and its keys/values are cached, after
which only the timestep and image tokens are queried.
"""

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .disentangle import masked_softmax
from .errors import ConfigError, InvalidLayout, ShapeMismatch, StepUnderflow
from .layout import Kind, build_layout

NULL_TOKEN = 0
# Model arithmetic runs in float32; latents and the sampler stay in float64.
DTYPE = np.float32


@dataclass(frozen=True)
class ToyDiTConfig:
    kind: Kind = Kind.FLUX
    layers: int = 3
    heads: int = 4
    dim: int = 32
    height: int = 32
    width: int = 32
    channels: int = 4
    vocab: int = 256
    max_text_len: int = 128
    seed: int = 0
    guidance: float = 1.0
    # Heads whose key projection is tied to the query projection; these
    # attend by content similarity and so localize matching image regions.
    tied_fraction: float = 0.75

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if min(self.layers, self.heads, self.dim, self.height, self.width, self.channels) <= 0:
            raise ConfigError("model sizes must be positive")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by {self.heads} heads")
        if self.guidance < 1:
            raise ConfigError("guidance scale must be >= 1")
        if self.vocab < 2:
            raise ConfigError("vocabulary needs a null token plus at least one word")

    @property
    def n_z(self):
        return self.height * self.width

    @property
    def n_v(self):
        # OMNI carries the condition image as one token per latent cell.
        return self.n_z if self.kind is Kind.OMNI else 0


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass(frozen=True)
class ModelWeights:
    tokens: np.ndarray
    signatures: np.ndarray
    text_pos: np.ndarray
    image_pos: np.ndarray
    patch: np.ndarray
    cond: np.ndarray
    time: np.ndarray
    layers: tuple
    out: np.ndarray


def init_weights(config):
    rng = np.random.default_rng(config.seed)
    d = config.dim
    scale = 1 / math.sqrt(d)

    def mat(*shape, s=scale):
        return (rng.standard_normal(shape) * s).astype(DTYPE)

    text_pos = mat(config.max_text_len, d, s=0.5)
    image_pos = mat(config.n_z, d, s=0.5)
    patch = mat(config.channels, d, s=1.0)
    cond = mat(config.channels, d, s=1.0)
    # Each word embedding is partly the condition embedding of a latent
    # "signature", a toy shared text/image space.
    signatures = mat(config.vocab, config.channels, s=1.0)
    tokens = mat(config.vocab, d, s=0.5) + signatures @ cond
    time = mat(d, d)
    dh = d // config.heads
    n_tied = int(round(config.tied_fraction * config.heads))
    layers = []
    for _ in range(config.layers):
        wq, wk = mat(d, d), mat(d, d)
        for j in range(n_tied):
            wk[:, j * dh : (j + 1) * dh] = wq[:, j * dh : (j + 1) * dh]
        layers.append(LayerWeights(wq, wk, mat(d, d), mat(d, d), mat(d, 4 * d), mat(4 * d, d)))
    out = mat(d, config.channels)
    return ModelWeights(tokens, signatures, text_pos, image_pos, patch, cond, time, tuple(layers), out)


def tokenize(instruction, vocab):
    """Map words to ids in ``[1, vocab)`` by CRC32; integer lists pass through."""
    if isinstance(instruction, str):
        words = instruction.lower().split()
        return [1 + zlib.crc32(w.encode("utf-8")) % (vocab - 1) for w in words]
    return [int(t) for t in instruction]


def uniform_schedule(T):
    return np.full(T, 1.0 / T)


def timestep_embedding(t, T, d):
    half = d // 2
    freqs = np.exp(-math.log(1000.0) * np.arange(half) / half)
    angles = (t / T) * 1000.0 * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)])
    return np.pad(emb, (0, d - emb.size))


def layer_norm(x, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps)


def gelu(x):
    return x / (1 + np.exp(-1.702 * x))


@dataclass(frozen=True)
class Prompt:
    """Instruction tokens, their position ids and the full-sequence layout."""

    tokens: tuple
    positions: tuple
    layout: object

    @classmethod
    def single(cls, tokens, config, instruction=0):
        tokens = tuple(tokens)
        layout = build_layout(config.kind, [len(tokens)], config.n_v, config.n_z, [instruction])
        return cls(tokens, tuple(range(len(tokens))), layout)

    @classmethod
    def null(cls, config):
        layout = build_layout(config.kind, [1], config.n_v, config.n_z, [None])
        return cls((NULL_TOKEN,), (0,), layout)


def embed_sequence(weights, config, prompt, cond_latent, t, T, z_t):
    """Token matrix for the full sequence ``prompt.layout`` describes."""
    layout = prompt.layout
    if layout.kind is not config.kind:
        raise InvalidLayout(f"{layout.kind.value} layout for a {config.kind.value} model")
    if max(prompt.positions) >= config.max_text_len:
        raise InvalidLayout("instruction is longer than the position table")
    if max(prompt.tokens) >= config.vocab or min(prompt.tokens) < 0:
        raise InvalidLayout("token id outside the vocabulary")
    z_t = np.asarray(z_t, dtype=DTYPE)
    cond_latent = np.asarray(cond_latent, dtype=DTYPE)
    shape = (config.height, config.width, config.channels)
    if z_t.shape != shape or cond_latent.shape != shape:
        raise ShapeMismatch(f"latents must be {shape}")
    text = weights.tokens[list(prompt.tokens)] + weights.text_pos[list(prompt.positions)]
    z_tok = z_t.reshape(config.n_z, config.channels) @ weights.patch + weights.image_pos
    c_tok = cond_latent.reshape(config.n_z, config.channels) @ weights.cond
    t_tok = timestep_embedding(t, T, config.dim).astype(DTYPE) @ weights.time
    if config.kind is Kind.FLUX:
        return np.concatenate([text, z_tok + c_tok + t_tok])
    return np.concatenate([text, c_tok + weights.image_pos, t_tok[None], z_tok])


def attention_layer(x, lw, heads, mask=None, capture=False, kv_prefix=None):
    """Pre-norm multi-head attention and feed-forward, both with residuals.

    ``x`` holds the query rows; ``kv_prefix`` optionally supplies cached
    ``(K, V)`` for keys that precede them. ``mask`` is indexed
    ``[query row, key column]`` over the rows of ``x`` and the full key set.
    Returns ``(x_out, attention or None, (k, v) of x's rows)``.
    """
    n, d = x.shape
    if d != lw.wq.shape[0]:
        raise ShapeMismatch(f"token width {d} does not match model width {lw.wq.shape[0]}")
    dh = d // heads
    a = layer_norm(x)
    q, k, v = a @ lw.wq, a @ lw.wk, a @ lw.wv
    keys, values = (k, v) if kv_prefix is None else (
        np.concatenate([kv_prefix[0], k]),
        np.concatenate([kv_prefix[1], v]),
    )
    L = keys.shape[0]
    qh = q.reshape(n, heads, dh).transpose(1, 0, 2)
    kh = keys.reshape(L, heads, dh).transpose(1, 0, 2)
    vh = values.reshape(L, heads, dh).transpose(1, 0, 2)
    logits = qh @ kh.transpose(0, 2, 1)
    logits *= DTYPE(1 / math.sqrt(dh))
    if capture:
        # Captured weights are reported in float64 so rows sum to 1 tightly.
        attn = masked_softmax(logits.astype(np.float64), mask)
        o = attn.astype(DTYPE) @ vh
    else:
        attn = masked_softmax(logits, mask)
        o = attn @ vh
    o = o.transpose(1, 0, 2).reshape(n, d)
    x = x + o @ lw.wo
    x = x + gelu(layer_norm(x) @ lw.w1) @ lw.w2
    return x, (attn if capture else None), (k, v)


def run_layers(weights, config, prompt, x, mask=None, capture_layer=None, cache=None):
    """Run the transformer stack over the embedded sequence ``x``.

    For OMNI, a ``cache`` dict is filled on the first call (full queries) and
    used on later calls, which only query the timestep and image rows.
    Returns ``(image hidden states, captured attention or None)``.
    """
    layout = prompt.layout
    captured = None
    reduced = config.kind is Kind.OMNI and cache is not None and "kv" in cache
    p = layout.prefix_len
    rows = x[p:] if reduced else x
    row_mask = None if mask is None else (mask[p:] if reduced else mask)
    stored = []
    for li, lw in enumerate(weights.layers):
        prefix = cache["kv"][li] if reduced else None
        rows, attn, (k, v) = attention_layer(
            rows, lw, config.heads, row_mask, li == capture_layer, prefix
        )
        if attn is not None:
            captured = attn
        if config.kind is Kind.OMNI and not reduced:
            stored.append((k[:p], v[:p]))
    if config.kind is Kind.OMNI and cache is not None and not reduced:
        cache["kv"] = stored
    image_rows = rows[-layout.n_z :]
    return image_rows, captured


@dataclass
class Conditioning:
    """Everything the denoiser is conditioned on besides the latent and step."""

    cond_latent: np.ndarray
    prompt: Prompt
    null_prompt: Prompt
    mask: np.ndarray | None = None
    null_mask: np.ndarray | None = None


@dataclass
class DenoiseState:
    z: np.ndarray
    t: int
    schedule: np.ndarray
    captured: dict = field(default_factory=dict)
    # Per-run OMNI prefix caches keyed by branch ("cond" / "uncond").
    kv_cache: dict = field(default_factory=dict)

    @property
    def T(self):
        return len(self.schedule)


class ToyDiT:
    def __init__(self, config):
        self.config = config
        self.weights = init_weights(config)

    def eps_branch(self, prompt, z_t, t, T, cond_latent, mask, capture_layer, cache):
        x = embed_sequence(self.weights, self.config, prompt, cond_latent, t, T, z_t)
        h, attn = run_layers(self.weights, self.config, prompt, x, mask, capture_layer, cache)
        eps = (layer_norm(h) @ self.weights.out).astype(np.float64)
        return eps.reshape(self.config.height, self.config.width, self.config.channels), attn

    def predict_noise(self, state, conditioning, capture_layer=None):
        """Classifier-free guided noise estimate; ``guidance == 1`` skips the null pass."""
        cache_c = state.kv_cache.setdefault("cond", {})
        eps_c, attn = self.eps_branch(
            conditioning.prompt, state.z, state.t, state.T, conditioning.cond_latent,
            conditioning.mask, capture_layer, cache_c,
        )
        if attn is not None:
            state.captured[(capture_layer, state.t)] = attn
        g = self.config.guidance
        if g == 1:
            return eps_c
        cache_u = state.kv_cache.setdefault("uncond", {})
        eps_u, _ = self.eps_branch(
            conditioning.null_prompt, state.z, state.t, state.T, conditioning.cond_latent,
            conditioning.null_mask, None, cache_u,
        )
        return eps_u + g * (eps_c - eps_u)


def reverse_step(state, eps):
    """One update ``z_{t-1} = z_t - schedule[t-1] * eps``."""
    if state.t < 1:
        raise StepUnderflow("already at t = 0")
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != state.z.shape:
        raise ShapeMismatch(f"noise {eps.shape} does not match latent {state.z.shape}")
    return replace(state, z=state.z - state.schedule[state.t - 1] * eps, t=state.t - 1)


def diffusion_loss(eps_true, eps_pred):
    """Mean squared error between true and predicted noise."""
    a, b = np.asarray(eps_true, dtype=np.float64), np.asarray(eps_pred, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))
