"""Influence scoring, instruction composition and mask-guided latent blending."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInstruction, ShapeMismatch, ZeroInfluence
from .layout import Kind, build_layout
from .maskgen import EditMask, overlap_counts


@dataclass(frozen=True)
class InfluenceReport:
    raw: np.ndarray
    normalized: np.ndarray
    # Instruction indices sorted by ascending score, ties kept in index order.
    order: list

    def to_dict(self):
        return {
            "raw": [float(x) for x in self.raw],
            "normalized": [float(x) for x in self.normalized],
            "order": [int(i) for i in self.order],
        }


def _mask_array(m):
    return m.mask if isinstance(m, EditMask) else np.asarray(m, dtype=bool)


def influence_scores(stacks, masks):
    """Total head-summed attention of each instruction inside its own mask."""
    if len(stacks) != len(masks) or not stacks:
        raise ShapeMismatch("need one mask per head-map stack")
    raw = []
    for stack, m in zip(stacks, masks):
        stack = np.asarray(stack, dtype=np.float64)
        mask = _mask_array(m)
        if stack.shape[1:] != mask.shape:
            raise ShapeMismatch(f"stack {stack.shape} does not match mask {mask.shape}")
        raw.append(float(stack[:, mask].sum()))
    raw = np.array(raw)
    total = raw.sum()
    if total == 0:
        raise ZeroInfluence("every instruction has zero influence in its region")
    order = np.argsort(raw, kind="stable").tolist()
    return InfluenceReport(raw, raw / total, order)


def compose_instructions(sequences, order, kind, n_z, n_v=0):
    """Concatenate instruction token sequences into one composite prompt.

    FLUX concatenates in ``order`` with running position ids. OMNI restarts the
    position ids at 0 for every instruction so none is favoured by position.
    Returns ``(tokens, layout, positions)``; ``positions`` covers the
    instruction tokens only.
    """
    kind = Kind(kind)
    order = list(order)
    if sorted(order) != list(range(len(sequences))):
        raise InvalidInstruction(f"order {order} is not a permutation of {len(sequences)}")
    for i, seq in enumerate(sequences):
        if len(seq) == 0:
            raise InvalidInstruction(f"instruction {i} has no tokens")
    tokens, positions = [], []
    for i in order:
        seq = list(sequences[i])
        start = len(tokens) if kind is Kind.FLUX else 0
        tokens.extend(seq)
        positions.extend(range(start, start + len(seq)))
    layout = build_layout(kind, [len(sequences[i]) for i in order], n_v, n_z, order)
    return tokens, layout, positions


def _order_free_mean(values, weights):
    """Mean of ``values[k]`` over entries with ``weights[k]`` set, along axis 0.

    Computed as ``min + sum(sorted(values - min)) / n`` so the result does not
    depend on the order of the leading axis and equals the common value exactly
    when all selected entries agree.
    """
    weights = weights.astype(bool)
    n = weights.sum(axis=0)
    big = np.where(weights, values, np.inf)
    base = big.min(axis=0)
    base = np.where(np.isfinite(base), base, 0.0)
    diffs = np.where(weights, values - base, 0.0)
    total = np.sort(diffs, axis=0).sum(axis=0)
    return np.where(n > 0, base + total / np.maximum(n, 1), 0.0)


def blend_latents(latents, masks, overlap=None):
    """Composite latent from per-instruction branches.

    Starts from the branch mean, pastes each branch into its masked cells in
    turn, then replaces cells covered by two or more masks with the mean of the
    covering branches.
    """
    latents = [np.asarray(z, dtype=np.float64) for z in latents]
    arrs = [_mask_array(m) for m in masks]
    if len(latents) != len(arrs) or len(latents) < 1:
        raise ShapeMismatch("need one mask per latent")
    shape = latents[0].shape
    if len(shape) != 3:
        raise ShapeMismatch(f"latents must be (H, W, C), got {shape}")
    for z, m in zip(latents, arrs):
        if z.shape != shape or m.shape != shape[:2]:
            raise ShapeMismatch(f"latent {z.shape} / mask {m.shape} mismatch")
    if overlap is None:
        overlap = overlap_counts(arrs)
    overlap = np.asarray(overlap)
    if overlap.shape != shape[:2]:
        raise ShapeMismatch("overlap map does not match latent grid")

    stack = np.stack(latents)
    cover = np.stack(arrs)[..., None]
    cover = np.broadcast_to(cover, stack.shape)
    out = _order_free_mean(stack, np.ones_like(cover))
    for z, m in zip(latents, arrs):
        out = np.where(m[..., None], z, out)
    shared = overlap >= 2
    if shared.any():
        out = np.where(shared[..., None], _order_free_mean(stack, cover), out)
    return out
