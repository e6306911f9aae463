"""Mask agreement scores and pixel-level latent differences."""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class MaskScore:
    iou: float
    precision: float
    recall: float

    def to_dict(self):
        return asdict(self)


def _pair(a, b, dtype):
    a, b = np.asarray(a, dtype=dtype), np.asarray(b, dtype=dtype)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def iou(a, b):
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    a, b = _pair(a, b, bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def mask_score(pred, truth):
    pred, truth = _pair(pred, truth, bool)
    tp = np.logical_and(pred, truth).sum()
    # Empty denominators follow the same convention as iou: nothing claimed, nothing missed.
    precision = float(tp / pred.sum()) if pred.sum() else 1.0
    recall = float(tp / truth.sum()) if truth.sum() else 1.0
    return MaskScore(iou(pred, truth), precision, recall)


def pixel_l1(a, b):
    a, b = _pair(a, b, np.float64)
    return float(np.mean(np.abs(a - b)))


def pixel_l2(a, b):
    a, b = _pair(a, b, np.float64)
    return float(np.mean((a - b) ** 2))
