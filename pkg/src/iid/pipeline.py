"""Branch denoising, mask generation, blending and masked denoising on the toy model."""

from dataclasses import dataclass

import numpy as np

from .blender import blend_latents, compose_instructions, influence_scores
from .disentangle import build_disentangle_mask
from .errors import ConfigError
from .layout import Kind, MapSource, default_map_source, extract_maps
from .maskgen import generate_masks
from .toydit import Conditioning, DenoiseState, Prompt, reverse_step, uniform_schedule

# Reported settings for the two model families; OMNI keeps guidance off.
FAMILY_DEFAULTS = {
    Kind.FLUX: {"T": 30, "S": 27, "guidance": 60.0},
    Kind.OMNI: {"T": 50, "S": 15, "guidance": 1.0},
}


@dataclass(frozen=True)
class PipelineConfig:
    T: int = 30
    S: int = 27
    # None selects the penultimate layer.
    layer: int | None = None
    sigma: float = 1.0
    # None selects the family default (ZP for FLUX, ZZ for OMNI).
    source: MapSource | None = None
    seed: int = 0
    schedule: tuple | None = None

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError("need at least two diffusion steps")
        if not 1 <= self.S < self.T:
            raise ConfigError(f"pre-defined step S={self.S} must lie in [1, T={self.T})")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.source is not None:
            object.__setattr__(self, "source", MapSource(self.source))
        if self.schedule is not None:
            s = np.asarray(self.schedule, dtype=np.float64)
            if s.shape != (self.T,) or np.any(s <= 0) or abs(s.sum() - 1) > 1e-9:
                raise ConfigError("schedule needs T positive entries summing to 1")

    def step_sizes(self):
        if self.schedule is None:
            return uniform_schedule(self.T)
        return np.asarray(self.schedule, dtype=np.float64)

    def capture_layer(self, model_config):
        layer = model_config.layers - 2 if self.layer is None else self.layer
        if model_config.layers < 2 and self.layer is None:
            layer = 0
        if not 0 <= layer < model_config.layers:
            raise ConfigError(f"layer {layer} outside [0, {model_config.layers})")
        return layer

    def map_source(self, kind):
        return self.source if self.source is not None else default_map_source(kind)


def initial_noise(model_config, seed):
    rng = np.random.default_rng([seed, 1])
    return rng.standard_normal((model_config.height, model_config.width, model_config.channels))


def random_source(model_config, seed):
    rng = np.random.default_rng([seed, 2])
    return rng.standard_normal((model_config.height, model_config.width, model_config.channels))


def planted_source(model, region_masks, token_lists, seed, strength=2.0):
    """Source latent whose region ``i`` carries content matching instruction ``i``.

    Region ``i`` is filled with the mean latent signature of instruction ``i``'s
    words, so heads with tied query/key projections link that region to that
    instruction.
    """
    cfg, w = model.config, model.weights
    rng = np.random.default_rng([seed, 3])
    z = 0.3 * rng.standard_normal((cfg.height, cfg.width, cfg.channels))
    for region, tokens in zip(region_masks, token_lists):
        concept = w.signatures[list(tokens)].astype(np.float64).mean(axis=0)
        concept *= strength / max(np.linalg.norm(concept), 1e-12)
        z[region] = concept + 0.05 * rng.standard_normal((int(region.sum()), cfg.channels))
    return z


@dataclass
class BranchResult:
    z: np.ndarray
    attention: np.ndarray
    # True when the captured step ran with the full query set (OMNI first step).
    full_query: bool
    prompt: Prompt


def _conditioning(model, source, prompt, mask=None, null_mask=None):
    return Conditioning(source, prompt, Prompt.null(model.config), mask, null_mask)


def run_branch(model, source, tokens, pcfg, z_T, instruction=0):
    """Denoise one instruction from ``z_T`` down to step ``S``.

    Attention at the capture layer is recorded during the last step, the one
    that produces ``z_S``.
    """
    prompt = Prompt.single(tokens, model.config, instruction)
    cond = _conditioning(model, source, prompt)
    layer = pcfg.capture_layer(model.config)
    state = DenoiseState(np.asarray(z_T, dtype=np.float64), pcfg.T, pcfg.step_sizes())
    attn, full = None, False
    while state.t > pcfg.S:
        last = state.t == pcfg.S + 1
        eps = model.predict_noise(state, cond, layer if last else None)
        if last:
            attn = state.captured[(layer, state.t)]
            full = state.t == pcfg.T
        state = reverse_step(state, eps)
    return BranchResult(state.z, attn, full, prompt)


def denoise(model, source, tokens, pcfg, z_T):
    """Plain single-instruction denoising over all ``T`` steps."""
    cond = _conditioning(model, source, Prompt.single(tokens, model.config))
    state = DenoiseState(np.asarray(z_T, dtype=np.float64), pcfg.T, pcfg.step_sizes())
    while state.t > 0:
        state = reverse_step(state, model.predict_noise(state, cond))
    return state.z


@dataclass
class IIDResult:
    latent: np.ndarray
    branch_latents: list = None
    composite_latent: np.ndarray = None
    stacks: list = None
    masks: list = None
    overlap: np.ndarray = None
    report: object = None
    attention_mask: np.ndarray = None
    prompt: Prompt = None
    branch_attention: list = None


def run_iid(model, source, instructions, pcfg, z_T=None, attention_mask="disentangle"):
    """Edit ``source`` with several instructions in one denoising pass.

    ``attention_mask`` is ``"disentangle"`` (default), ``None`` for no masking
    after the merge step, or an explicit boolean matrix for the composite
    sequence. A single instruction bypasses the merge and runs :func:`denoise`.
    """
    cfg = model.config
    if not instructions:
        raise ConfigError("at least one instruction is required")
    token_lists = [list(t) for t in instructions]
    if z_T is None:
        z_T = initial_noise(cfg, pcfg.seed)
    if len(token_lists) == 1:
        return IIDResult(denoise(model, source, token_lists[0], pcfg, z_T))

    branches = [run_branch(model, source, t, pcfg, z_T) for t in token_lists]
    src = pcfg.map_source(cfg.kind)
    stacks = [
        extract_maps(b.attention, b.prompt.layout, src, 0, cfg.height, cfg.width, b.full_query)
        for b in branches
    ]
    masks, overlap = generate_masks(stacks, pcfg.sigma)
    report = influence_scores(stacks, masks)

    order = report.order if cfg.kind is Kind.FLUX else list(range(len(token_lists)))
    tokens, layout, positions = compose_instructions(token_lists, order, cfg.kind, cfg.n_z, cfg.n_v)
    prompt = Prompt(tuple(tokens), tuple(positions), layout)
    composite = blend_latents([b.z for b in branches], masks, overlap)

    block = cfg.kind is Kind.FLUX
    if isinstance(attention_mask, str):
        if attention_mask != "disentangle":
            raise ConfigError(f"unknown attention mask mode {attention_mask!r}")
        allowed = build_disentangle_mask(layout, masks, overlap, block)
        null_allowed = build_disentangle_mask(Prompt.null(cfg).layout, masks, overlap, block)
    else:
        allowed, null_allowed = attention_mask, None

    cond = _conditioning(model, source, prompt, allowed, null_allowed)
    state = DenoiseState(composite, pcfg.S, pcfg.step_sizes())
    while state.t > 0:
        state = reverse_step(state, model.predict_noise(state, cond))
    return IIDResult(
        state.z, [b.z for b in branches], composite, stacks, masks, overlap, report,
        allowed, prompt, [b.attention for b in branches],
    )
