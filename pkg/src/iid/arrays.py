"""Dense patch-grid numerics: normalization, reshaping, smoothing and Otsu.

Grids are plain 2-D ``float64`` arrays of shape ``(H', W')``; binary masks are
``bool`` arrays of the same shape; a head-map stack is a ``(J, H', W')`` array.
"""

import math

import numpy as np

from .errors import DegenerateHistogram, InvalidValue, ShapeMismatch

OTSU_BINS = 256


def minmax_normalize(v):
    """Affinely map ``v`` onto ``[0, 1]``; a constant input maps to all zeros."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise InvalidValue("cannot normalize an empty array")
    if not np.all(np.isfinite(v)):
        raise InvalidValue("non-finite value in input")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def reshape_to_grid(v, h, w):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != h * w:
        raise ShapeMismatch(f"vector of shape {v.shape} cannot fill a {h}x{w} grid")
    return v.reshape(h, w)


def gaussian_kernel1d(sigma):
    """Sampled Gaussian of radius ``ceil(3 * sigma)``, renormalized to sum 1."""
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_axis(g, kernel, axis):
    radius = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(g, pad, mode="edge")
    n = g.shape[axis]
    out = np.zeros_like(g)
    for offset, weight in enumerate(kernel):
        out += weight * np.take(padded, np.arange(offset, offset + n), axis=axis)
    return out


def gaussian_filter(g, sigma):
    """Separable Gaussian smoothing with replicate-edge padding.

    ``sigma == 0`` returns an unchanged copy.
    """
    if sigma < 0:
        raise InvalidValue(f"sigma must be non-negative, got {sigma}")
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D grid, got shape {g.shape}")
    if sigma == 0:
        return g.copy()
    kernel = gaussian_kernel1d(sigma)
    return _filter_axis(_filter_axis(g, kernel, 0), kernel, 1)


def histogram_bins(g, bins=OTSU_BINS):
    """Bin index of every cell under ``bins`` uniform bins spanning ``[min, max]``.

    Bin ``b`` holds normalized values in ``(b/bins, (b+1)/bins]``; the minimum
    goes to bin 0. With this convention ``bin >= k`` is exactly
    ``normalized value > k/bins``.
    """
    g = np.asarray(g, dtype=np.float64)
    lo, hi = g.min(), g.max()
    x = (g - lo) / (hi - lo)
    return np.clip(np.ceil(x * bins).astype(np.int64) - 1, 0, bins - 1)


def otsu_binarize(g, bins=OTSU_BINS):
    """Otsu threshold over a ``bins``-bin histogram and the resulting mask.

    Candidate thresholds are the interior bin edges. Between-class variance is
    compared exactly in integer arithmetic; ties go to the lowest threshold.
    Returns ``(threshold, mask)`` with ``mask`` true above the threshold.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.size == 0 or not np.all(np.isfinite(g)):
        raise InvalidValue("grid must be non-empty and finite")
    lo, hi = float(g.min()), float(g.max())
    if hi == lo:
        raise DegenerateHistogram("constant grid has no threshold")

    idx = histogram_bins(g, bins)
    counts = np.bincount(idx.ravel(), minlength=bins).tolist()
    total_n = g.size
    total_s = int(np.dot(np.arange(bins), counts))

    # sigma_B^2 is proportional to (n1*s0 - n0*s1)^2 / (n0*n1) with bin
    # indices standing in for bin centres (affine, so the argmax is unchanged).
    best_k, best_num, best_den = None, 0, 1
    n0 = s0 = 0
    for k in range(1, bins):
        n0 += counts[k - 1]
        s0 += (k - 1) * counts[k - 1]
        n1, s1 = total_n - n0, total_s - s0
        num = (n1 * s0 - n0 * s1) ** 2
        den = n0 * n1
        if best_k is None or num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den

    threshold = lo + best_k * (hi - lo) / bins
    return threshold, idx >= best_k
