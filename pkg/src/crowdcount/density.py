"""Ground-truth density maps from head annotations.

Each head contributes one isotropic Gaussian whose width either adapts to the
local head spacing (beta times the mean distance to the k nearest other
heads) or is fixed.  Kernels are truncated to the image and renormalized per
head, so every head adds exactly unit mass and the map total equals the head
count.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.spatial import cKDTree

from .data_io import DensityMap

SIGMA_MIN = 0.5  # clamp for coincident heads (k-NN distance 0)
KERNEL_TRUNCATE = 4.0  # kernel support radius, in sigmas
SMOOTH_WINDOW = 15  # box window (cells) for the sparse/dense region split


def knn_sigma(
    points,
    k: int = 3,
    beta: float = 0.3,
    sigma_fixed: float = 15.0,
    sigma_min: float = SIGMA_MIN,
) -> np.ndarray:
    """Per-head Gaussian width: beta times the mean distance to the k nearest
    other heads, clamped below by ``sigma_min``.

    The adaptive rule needs at least k+1 points; with fewer, every head falls
    back to ``sigma_fixed`` (this is the documented behaviour, not an error).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return np.zeros(0)
    if n < k + 1:
        return np.full(n, float(sigma_fixed))
    tree = cKDTree(pts)
    dists, _ = tree.query(pts, k=k + 1)  # column 0 is the point itself
    sigma = beta * dists[:, 1:].mean(axis=1)
    return np.maximum(sigma, sigma_min)


def render_density(points, sigmas, height: int, width: int) -> DensityMap:
    """Sum of per-head Gaussians at stride 1.

    Each kernel is evaluated on a window of ``KERNEL_TRUNCATE`` sigmas clipped
    to the image, then renormalized to unit mass, so the map total equals the
    number of heads.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    sig = np.asarray(sigmas, dtype=np.float64).reshape(-1)
    if len(sig) != len(pts):
        raise ValueError(f"{len(pts)} points but {len(sig)} sigmas")
    if np.any(sig <= 0):
        raise ValueError("sigmas must be positive")
    values = np.zeros((height, width))
    for (x, y), s in zip(pts, sig):
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"point ({x}, {y}) outside {width}x{height} image")
        reach = max(1, int(np.ceil(KERNEL_TRUNCATE * s)))
        r0 = max(0, int(np.floor(y)) - reach)
        r1 = min(height, int(np.floor(y)) + reach + 1)
        c0 = max(0, int(np.floor(x)) - reach)
        c1 = min(width, int(np.floor(x)) + reach + 1)
        rows = np.arange(r0, r1, dtype=np.float64)
        cols = np.arange(c0, c1, dtype=np.float64)
        kernel = np.exp(
            -((rows[:, None] - y) ** 2 + (cols[None, :] - x) ** 2) / (2.0 * s * s)
        )
        values[r0:r1, c0:c1] += kernel / kernel.sum()
    return DensityMap(values, stride=1)


def fixed_sigma_density(points, height: int, width: int, sigma: float = 15.0) -> DensityMap:
    """``render_density`` with one constant kernel width for all heads."""
    n = len(np.asarray(points, dtype=np.float64).reshape(-1, 2))
    return render_density(points, np.full(n, float(sigma)), height, width)


def downsample_preserving_count(dmap: DensityMap, factor: int) -> DensityMap:
    """Block-sum the map so the total is preserved; stride scales by ``factor``.

    Dimensions that are not divisible by the factor are zero-padded at the
    bottom/right before summing.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError("factor must be a positive integer")
    factor = int(factor)
    if factor == 1:
        return DensityMap(dmap.values.copy(), stride=dmap.stride)
    values = dmap.values
    pad_h = (-values.shape[0]) % factor
    pad_w = (-values.shape[1]) % factor
    if pad_h or pad_w:
        values = np.pad(values, ((0, pad_h), (0, pad_w)))
    h, w = values.shape[0] // factor, values.shape[1] // factor
    blocks = values.reshape(h, factor, w, factor).sum(axis=(1, 3))
    return DensityMap(blocks, stride=dmap.stride * factor)


def split_sparse_dense(dmap: DensityMap, tau: float) -> tuple[DensityMap, DensityMap]:
    """Split a map into (sparse, dense) parts that sum back to it exactly.

    A cell is dense when a box-smoothed copy of the map reaches ``tau`` there
    (inclusive, so tau=0 sends everything dense and tau=inf everything
    sparse).  The window is ``SMOOTH_WINDOW`` cells so the decision is about
    region-level crowding, not single-cell noise.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    smoothed = uniform_filter(dmap.values, size=SMOOTH_WINDOW, mode="constant")
    mask = smoothed >= tau
    dense = np.where(mask, dmap.values, 0.0)
    sparse = np.where(mask, 0.0, dmap.values)
    return DensityMap(sparse, stride=dmap.stride), DensityMap(dense, stride=dmap.stride)


def class_label(dmap: DensityMap, theta_cls: float) -> int:
    """1 (dense) when the map total reaches ``theta_cls``, else 0 (sparse)."""
    if theta_cls <= 0:
        raise ValueError("theta_cls must be positive")
    return int(dmap.count >= theta_cls)


def default_region_threshold(dmap: DensityMap) -> float:
    """Dataset-relative split level: 4x the mean positive cell value.

    An empty map has no positive cells; returning infinity sends everything
    to the sparse part, which is the right call for an empty scene.
    """
    positive = dmap.values[dmap.values > 0]
    if positive.size == 0:
        return float("inf")
    return 4.0 * float(positive.mean())
