"""Synthetic head-map fixtures with planted edit regions.

Three kinds of head are modelled: edit-focused heads that light up the
instruction's own region (plus base noise and hot spots shared between
instructions), global heads whose map is the same for every instruction, and
unstructured heads carrying independent noise.
"""

from dataclasses import dataclass

import numpy as np

from .arrays import gaussian_filter, minmax_normalize
from .errors import InvalidScene
from .maskgen import fuse_mask


@dataclass
class SceneSpec:
    """Grid size plus one ground-truth region per instruction.

    A region is either an ``[x, y, w, h]`` rectangle (x is the column) or a
    boolean ``(height, width)`` array.
    """

    height: int
    width: int
    regions: list
    seed: int = 0

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise InvalidScene("grid must be non-empty")
        for m in self.region_masks():
            if not m.any():
                raise InvalidScene("every region must cover at least one cell")

    def region_masks(self):
        out = []
        for r in self.regions:
            if isinstance(r, np.ndarray) and r.dtype == bool:
                if r.shape != (self.height, self.width):
                    raise InvalidScene(f"pixel region of shape {r.shape} does not fit the grid")
                out.append(r.copy())
                continue
            x, y, w, h = (int(v) for v in r)
            if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > self.width or y + h > self.height:
                raise InvalidScene(f"rectangle {list(r)} is empty or out of bounds")
            m = np.zeros((self.height, self.width), dtype=bool)
            m[y : y + h, x : x + w] = True
            out.append(m)
        return out

    def to_dict(self):
        regions = []
        for r in self.regions:
            if isinstance(r, np.ndarray) and r.dtype == bool:
                regions.append({"cells": np.argwhere(r).tolist()})
            else:
                regions.append([int(v) for v in r])
        return {"height": self.height, "width": self.width, "regions": regions, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        regions = []
        for r in d["regions"]:
            if isinstance(r, dict):
                m = np.zeros((d["height"], d["width"]), dtype=bool)
                for row, col in r["cells"]:
                    m[row, col] = True
                regions.append(m)
            else:
                regions.append([int(v) for v in r])
        return cls(int(d["height"]), int(d["width"]), regions, int(d.get("seed", 0)))


def random_scene(height, width, n, seed, min_size=6, max_size=12, disjoint=True):
    """``n`` random rectangles, rejection-sampled to be pairwise disjoint if asked."""
    rng = np.random.default_rng(seed)
    max_size = min(max_size, height, width)
    min_size = min(min_size, max_size)
    for _ in range(1000):
        rects, taken = [], np.zeros((height, width), dtype=bool)
        for _ in range(n):
            w = int(rng.integers(min_size, max_size + 1))
            h = int(rng.integers(min_size, max_size + 1))
            x = int(rng.integers(0, width - w + 1))
            y = int(rng.integers(0, height - h + 1))
            cell = np.zeros_like(taken)
            cell[y : y + h, x : x + w] = True
            if disjoint and (cell & taken).any():
                break
            taken |= cell
            rects.append([x, y, w, h])
        if len(rects) == n:
            return SceneSpec(height, width, rects, seed)
    raise InvalidScene(f"could not place {n} disjoint rectangles on {height}x{width}")


@dataclass
class HeadRoleProfile:
    fraction_edit_focused: float = 0.75
    fraction_global: float = 0.25
    # Noise amplitude; 0 gives exact indicator maps on edit-focused heads.
    eta: float = 0.0
    hot_cells: int = 0
    global_smoothing: float = 2.0

    def __post_init__(self):
        fe, fg = self.fraction_edit_focused, self.fraction_global
        if not (0 <= fe <= 1 and 0 <= fg <= 1 and fe + fg <= 1 + 1e-12):
            raise InvalidScene("head-role fractions must lie in [0, 1] and sum to at most 1")
        if self.eta < 0 or self.hot_cells < 0:
            raise InvalidScene("eta and hot_cells must be non-negative")

    def head_roles(self, J):
        n_edit = min(J, int(round(self.fraction_edit_focused * J)))
        n_global = min(J - n_edit, int(round(self.fraction_global * J)))
        return ["edit"] * n_edit + ["global"] * n_global + ["noise"] * (J - n_edit - n_global)


def make_attention_fixture(spec, profile, J, seed=None):
    """One ``(J, H, W)`` head-map stack per region of ``spec``."""
    if J < 1:
        raise InvalidScene("need at least one head")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    regions = spec.region_masks()
    n, shape = len(regions), (spec.height, spec.width)
    union = np.any(regions, axis=0)
    free = np.flatnonzero(~union)
    eta = profile.eta
    stacks = np.zeros((n, J) + shape)

    for j, role in enumerate(profile.head_roles(J)):
        if role == "edit":
            k = min(profile.hot_cells, free.size)
            hot_idx = rng.choice(free, size=k, replace=False) if k else np.array([], dtype=int)
            hot_val = rng.uniform(0.8, 1.0, size=k)
            for i, region in enumerate(regions):
                m = 0.2 * eta * rng.uniform(size=shape)
                m[region] = 1.0 - 0.2 * min(eta, 1.0) * rng.uniform(size=int(region.sum()))
                m.flat[hot_idx] = np.maximum(m.flat[hot_idx], hot_val)
                stacks[i, j] = minmax_normalize(m)
        elif role == "global":
            g = minmax_normalize(gaussian_filter(rng.uniform(size=shape), profile.global_smoothing))
            stacks[:, j] = g
        else:
            for i in range(n):
                stacks[i, j] = minmax_normalize(eta * rng.uniform(size=shape))
    return list(stacks)


def naive_baseline_mask(stack, sigma, instruction=0):
    """Head-mean, smooth, Otsu: mask generation without head-wise subtraction."""
    return fuse_mask(stack, sigma, instruction)
