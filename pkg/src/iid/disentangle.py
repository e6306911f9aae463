"""Attention-visibility masks that keep instructions out of each other's regions."""

import numpy as np

from .errors import ShapeMismatch
from .layout import Role
from .maskgen import EditMask


def _mask_array(m):
    return m.mask if isinstance(m, EditMask) else np.asarray(m, dtype=bool)


def build_disentangle_mask(layout, masks, overlap=None, block_cross_instruction=True):
    """Boolean ``(L, L)`` matrix; ``allowed[q, k]`` lets query ``q`` see key ``k``.

    Starting from full visibility, with ``excl_i`` the cells covered only by
    mask ``i``:

    * instruction ``i`` cannot see image cells in ``excl_j`` for ``j != i``,
      and image cells covered by another mask but not by ``M_i`` cannot see
      instruction ``i``;
    * cells covered by two or more masks stay visible to every instruction;
    * with ``block_cross_instruction``, instruction blocks cannot see each other;
    * image cells of ``M_j`` outside ``M_i`` cannot see image cells in ``excl_i``.

    Segments of instruction id ``None`` (unconditional prompts) are left open.
    The diagonal is always allowed.
    """
    arrs = [_mask_array(m).ravel() for m in masks]
    noisy = layout.noisy
    for a in arrs:
        if a.size != noisy.length:
            raise ShapeMismatch(f"mask of {a.size} cells for {noisy.length} image tokens")
    n = len(arrs)
    L = layout.total_len
    allowed = np.ones((L, L), dtype=bool)

    if n:
        cover = np.stack(arrs)
        counts = cover.sum(axis=0) if overlap is None else np.asarray(overlap).ravel()
        if counts.size != noisy.length:
            raise ShapeMismatch("overlap map does not match the image segment")
        excl = cover & (counts < 2)
        img = np.arange(noisy.start, noisy.stop)

        instr_segs = [
            s for s in layout.segments if s.role is Role.INSTRUCTION and s.instruction is not None
        ]
        for seg in instr_segs:
            i = seg.instruction
            foreign_excl = excl[[j for j in range(n) if j != i]].any(axis=0)
            allowed[seg.start : seg.stop, img[foreign_excl]] = False
            foreign_cells = cover[[j for j in range(n) if j != i]].any(axis=0) & ~cover[i]
            allowed[img[foreign_cells], seg.start : seg.stop] = False
            if block_cross_instruction:
                for other in instr_segs:
                    if other.instruction != i:
                        allowed[seg.start : seg.stop, other.start : other.stop] = False

        for i in range(n):
            queries = cover[[j for j in range(n) if j != i]].any(axis=0) & ~cover[i]
            if queries.any() and excl[i].any():
                allowed[np.ix_(img[queries], img[excl[i]])] = False

    np.fill_diagonal(allowed, True)
    return allowed


def masked_softmax(logits, mask=None):
    """Row softmax over the last axis with forbidden entries set to exactly 0."""
    logits = np.asarray(logits)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != logits.shape[-2:]:
            raise ShapeMismatch(f"mask {mask.shape} does not match logits {logits.shape}")
        x = np.where(mask, logits, -np.inf)
    else:
        x = logits.copy()
    x -= x.max(axis=-1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=-1, keepdims=True)
    return x


def mask_stats(allowed):
    return {
        "size": int(allowed.shape[0]),
        "allowed": int(allowed.sum()),
        "forbidden": int((~allowed).sum()),
        "allowed_fraction": float(allowed.mean()),
    }
