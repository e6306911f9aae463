"""Head-wise subtraction and fusion of per-head maps into binary edit masks."""

from dataclasses import dataclass

import numpy as np

from .arrays import gaussian_filter, otsu_binarize
from .errors import (
    DegenerateHistogram,
    DegenerateMask,
    NeedsMultipleInstructions,
    ShapeMismatch,
)


@dataclass(frozen=True)
class EditMask:
    instruction: int
    mask: np.ndarray
    # Smoothed head-mean grid before binarization, kept for diagnostics.
    fused_grid: np.ndarray
    threshold: float


def _check_stacks(stacks):
    stacks = [np.asarray(s, dtype=np.float64) for s in stacks]
    if len(stacks) < 2:
        raise NeedsMultipleInstructions(f"need at least 2 instructions, got {len(stacks)}")
    shape = stacks[0].shape
    if len(shape) != 3:
        raise ShapeMismatch(f"head-map stacks must be (J, H, W), got {shape}")
    for s in stacks[1:]:
        if s.shape != shape:
            raise ShapeMismatch(f"stack shapes differ: {shape} vs {s.shape}")
    return stacks


def headwise_difference(stacks, i):
    """Per head, instruction ``i``'s map minus the mean of the others, floored at 0."""
    stacks = _check_stacks(stacks)
    others = [s for k, s in enumerate(stacks) if k != i]
    rest = sum(others) / len(others)
    return np.maximum(stacks[i] - rest, 0.0)


def fuse_mask(diffs, sigma, instruction=0):
    """Average over heads, smooth, then binarize with Otsu."""
    diffs = np.asarray(diffs, dtype=np.float64)
    if diffs.ndim != 3 or diffs.shape[0] == 0:
        raise ShapeMismatch(f"expected a non-empty (J, H, W) stack, got {diffs.shape}")
    fused = gaussian_filter(diffs.mean(axis=0), sigma)
    try:
        threshold, mask = otsu_binarize(fused)
    except DegenerateHistogram as exc:
        raise DegenerateMask(
            f"instruction {instruction}: fused map is constant", instruction
        ) from exc
    return EditMask(instruction, mask, fused, threshold)


def overlap_counts(masks):
    """Number of masks covering each cell."""
    return np.sum([m.mask if isinstance(m, EditMask) else m for m in masks], axis=0).astype(
        np.int64
    )


def generate_masks(stacks, sigma):
    """Edit masks for every instruction plus the per-cell overlap counts."""
    stacks = _check_stacks(stacks)
    masks = [fuse_mask(headwise_difference(stacks, i), sigma, i) for i in range(len(stacks))]
    return masks, overlap_counts(masks)
