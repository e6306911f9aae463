"""Token layouts for the two concatenation schemes and attention-map extraction.

``FLUX`` concatenates instruction tokens and noisy-image tokens. ``OMNI``
concatenates instruction tokens, condition-image tokens, one timestep token and
noisy-image tokens; after the first step only the timestep and image tokens
are queried.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .arrays import minmax_normalize
from .errors import InvalidLayout, ShapeMismatch, UnknownInstruction

ROW_SUM_ATOL = 1e-6


class Kind(str, enum.Enum):
    FLUX = "flux"
    OMNI = "omni"


class Role(str, enum.Enum):
    INSTRUCTION = "instruction"
    CONDITION = "condition"
    TIMESTEP = "timestep"
    NOISY = "noisy"


class MapSource(str, enum.Enum):
    ZP = "zp"
    ZZ = "zz"


def default_map_source(kind):
    # OMNI's image-to-instruction block does not localize edits; use image-to-image.
    return MapSource.ZZ if Kind(kind) is Kind.OMNI else MapSource.ZP


@dataclass(frozen=True)
class Segment:
    role: Role
    start: int
    length: int
    # Instruction id for INSTRUCTION segments; None marks an unconditional prompt.
    instruction: int | None = None

    @property
    def stop(self):
        return self.start + self.length

    @property
    def slice(self):
        return slice(self.start, self.stop)


@dataclass(frozen=True)
class TokenLayout:
    kind: Kind
    segments: tuple
    total_len: int

    def instruction_segment(self, instr):
        for seg in self.segments:
            if seg.role is Role.INSTRUCTION and seg.instruction == instr:
                return seg
        raise UnknownInstruction(f"no instruction {instr} in layout")

    def instruction_ids(self):
        return [s.instruction for s in self.segments if s.role is Role.INSTRUCTION]

    @property
    def noisy(self):
        return next(s for s in self.segments if s.role is Role.NOISY)

    @property
    def n_z(self):
        return self.noisy.length

    @property
    def prefix_len(self):
        """Tokens ahead of the timestep token (OMNI); cached after the first step."""
        for seg in self.segments:
            if seg.role in (Role.TIMESTEP, Role.NOISY):
                return seg.start
        return self.total_len


def build_layout(kind, n_p, n_v=0, n_z=0, instruction_ids=None):
    """Deterministic segment table for one concatenated token sequence.

    ``n_p`` lists the token count of each instruction in sequence order;
    ``instruction_ids`` labels them (defaults to ``0..N-1``).
    """
    kind = Kind(kind)
    n_p = list(n_p)
    if n_z <= 0:
        raise InvalidLayout("noisy-image segment must be non-empty")
    if not n_p:
        raise InvalidLayout("at least one instruction segment is required")
    if any(n <= 0 for n in n_p):
        raise InvalidLayout(f"instruction lengths must be positive, got {n_p}")
    if instruction_ids is None:
        instruction_ids = list(range(len(n_p)))
    instruction_ids = list(instruction_ids)
    if len(instruction_ids) != len(n_p):
        raise InvalidLayout("one id per instruction segment is required")
    real_ids = [i for i in instruction_ids if i is not None]
    if len(set(real_ids)) != len(real_ids):
        raise InvalidLayout(f"instruction ids must be unique, got {instruction_ids}")
    if kind is Kind.OMNI and n_v < 0:
        raise InvalidLayout("condition-image length must be non-negative")

    segments = []
    offset = 0

    def add(role, length, instr=None):
        nonlocal offset
        segments.append(Segment(role, offset, length, instr))
        offset += length

    for instr, n in zip(instruction_ids, n_p):
        add(Role.INSTRUCTION, n, instr)
    if kind is Kind.OMNI:
        add(Role.CONDITION, n_v)
        add(Role.TIMESTEP, 1)
    add(Role.NOISY, n_z)
    return TokenLayout(kind, tuple(segments), offset)


def validate_attention(weights, atol=ROW_SUM_ATOL):
    """Check a ``(J, N_q, N_k)`` post-softmax tensor and return it as float64."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 3:
        raise ShapeMismatch(f"attention must be (J, N_q, N_k), got {weights.shape}")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ShapeMismatch("attention weights must be finite and non-negative")
    sums = weights.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > atol:
        raise ShapeMismatch("attention rows do not sum to 1")
    return weights


def image_query_rows(layout, n_q, n_k=None, timestep_is_initial=True):
    """Rows of a captured attention tensor that belong to noisy-image queries.

    OMNI past its first step queries only ``[timestep, noisy]``, so the image
    rows are the last ``N_z`` of a ``1 + N_z`` row block.
    """
    if n_k is not None and n_k != layout.total_len:
        raise ShapeMismatch(f"{n_k} key columns, layout has {layout.total_len} tokens")
    noisy = layout.noisy
    if layout.kind is Kind.OMNI and not timestep_is_initial:
        if n_q != 1 + noisy.length:
            raise ShapeMismatch(f"expected {1 + noisy.length} query rows, got {n_q}")
        return slice(1, 1 + noisy.length)
    if n_q != layout.total_len:
        raise ShapeMismatch(f"expected {layout.total_len} query rows, got {n_q}")
    return noisy.slice


def _block_maps(raw, rows, cols, h, w):
    n_z = rows.stop - rows.start
    if h * w != n_z:
        raise ShapeMismatch(f"{h}x{w} grid does not hold {n_z} image tokens")
    block = raw[:, rows, cols]
    means = block.mean(axis=-1)
    return np.stack([minmax_normalize(m).reshape(h, w) for m in means])


def extract_zp_maps(raw, layout, instr, h, w, timestep_is_initial=True):
    """Per-head maps of image-query attention onto instruction ``instr``'s tokens."""
    raw = validate_attention(raw)
    seg = layout.instruction_segment(instr)
    rows = image_query_rows(layout, raw.shape[1], raw.shape[2], timestep_is_initial)
    return _block_maps(raw, rows, seg.slice, h, w)


def extract_zz_maps(raw, layout, h, w, timestep_is_initial=True):
    """Per-head maps of image-query attention onto the noisy-image tokens."""
    raw = validate_attention(raw)
    rows = image_query_rows(layout, raw.shape[1], raw.shape[2], timestep_is_initial)
    return _block_maps(raw, rows, layout.noisy.slice, h, w)


def extract_maps(raw, layout, source, instr, h, w, timestep_is_initial=True):
    if MapSource(source) is MapSource.ZP:
        return extract_zp_maps(raw, layout, instr, h, w, timestep_is_initial)
    return extract_zz_maps(raw, layout, h, w, timestep_is_initial)
