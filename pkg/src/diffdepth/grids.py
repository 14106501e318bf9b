"""Core 2-D grid types, validation helpers, percentiles and resampling.

A grid is a plain ``(H, W)`` float64 ndarray, a mask is an ``(H, W)`` bool
ndarray, and an RGB image / 3-channel latent is a ``(3, H, W)`` float64
ndarray.  Everything downstream builds on these three conventions.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyMask, ShapeMismatch

__all__ = [
    "as_grid",
    "as_mask",
    "as_rgb",
    "full_mask",
    "percentile",
    "resize_bilinear",
]


def as_grid(values) -> np.ndarray:
    """Validate and return a 2-D float64 grid with finite values."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch(f"grid must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeMismatch(f"grid must be at least 1x1, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("grid contains non-finite values; pair them with a mask instead")
    return a


def as_mask(mask, shape: tuple[int, int]) -> np.ndarray:
    """Validate a boolean mask against the shape of the grid it annotates."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != tuple(shape):
        raise ShapeMismatch(f"mask shape {m.shape} does not match grid shape {tuple(shape)}")
    return m


def full_mask(grid: np.ndarray) -> np.ndarray:
    """All-valid mask for ``grid``."""
    return np.ones(np.asarray(grid).shape[:2], dtype=bool)


def as_rgb(image) -> np.ndarray:
    """Validate a ``(3, H, W)`` float64 image with values in [0, 1]."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ShapeMismatch(f"rgb image must have shape (3, H, W), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("rgb image contains non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("rgb values must lie in [0, 1]")
    return a


def percentile(grid: np.ndarray, mask: np.ndarray, q: float) -> float:
    """Percentile of the valid pixels at fraction ``q``.

    Linear interpolation between closest ranks (rank ``q * (n - 1)``),
    so q=0 is the minimum and q=1 the maximum.
    """
    g = as_grid(grid)
    m = as_mask(mask, g.shape)
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q must lie in [0, 1], got {q}")
    vals = g[m]
    if vals.size == 0:
        raise EmptyMask("percentile needs at least one valid pixel")
    return float(np.quantile(vals, q))


def resize_bilinear(grid: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Corner-aligned bilinear resampling to ``(new_h, new_w)``.

    Output pixel (i, j) samples the source at
    ``(i * (H-1)/(new_h-1), j * (W-1)/(new_w-1))``; a size-1 output axis
    samples source coordinate 0.  Same-shape resize is the identity.
    """
    g = as_grid(grid)
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target shape must be at least 1x1, got ({new_h}, {new_w})")
    h, w = g.shape
    if (new_h, new_w) == (h, w):
        return g.copy()
    ys = np.linspace(0.0, h - 1.0, new_h) if new_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, new_w) if new_w > 1 else np.zeros(1)
    return _sample_bilinear(g, ys[:, None], xs[None, :])


def _sample_bilinear(g: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``g`` at (broadcastable) float coordinates, clamped to the border."""
    h, w = g.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    top = g[y0, x0] * (1.0 - fx) + g[y0, x1] * fx
    bot = g[y1, x0] * (1.0 - fx) + g[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy
