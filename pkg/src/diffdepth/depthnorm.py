"""Affine-invariant depth normalization and the depth/3-channel codec convention.

Depth maps are normalized with an affine map anchored at the 2% and 98%
percentiles of the valid pixels so that most values land in [-1, 1]; the
recorded percentile pair makes the map exactly invertible.  The 3-channel
codecs stand in for a learned latent autoencoder: depth enters replicated
into three channels and leaves as their average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRange, ShapeMismatch
from .grids import as_grid, as_mask, percentile, resize_bilinear, _sample_bilinear

__all__ = [
    "NormalizedDepth",
    "normalize_depth",
    "denormalize_depth",
    "replicate3",
    "average3",
    "channel_consistency",
    "IdentityCodec",
    "AvgPoolCodec",
    "make_codec",
]


@dataclass(frozen=True)
class NormalizedDepth:
    """Unitless depth grid plus the percentile pair that produced it."""

    grid: np.ndarray
    d2: float
    d98: float


def normalize_depth(d: np.ndarray, mask: np.ndarray) -> NormalizedDepth:
    """Map depth to ``((d - d2) / (d98 - d2) - 0.5) * 2`` over valid pixels.

    Raises DegenerateRange when the percentile window is narrower than 1e-9
    (near-constant depth), where the map is undefined.
    """
    g = as_grid(d)
    m = as_mask(mask, g.shape)
    d2 = percentile(g, m, 0.02)
    d98 = percentile(g, m, 0.98)
    if d98 - d2 < 1e-9:
        raise DegenerateRange(f"percentile window [{d2}, {d98}] too narrow to normalize")
    grid = ((g - d2) / (d98 - d2) - 0.5) * 2.0
    return NormalizedDepth(grid=grid, d2=float(d2), d98=float(d98))


def denormalize_depth(n: NormalizedDepth) -> np.ndarray:
    """Exact inverse of :func:`normalize_depth`."""
    return (np.asarray(n.grid, dtype=np.float64) / 2.0 + 0.5) * (n.d98 - n.d2) + n.d2


def replicate3(d: np.ndarray) -> np.ndarray:
    """Stack a grid into three identical channels, shape ``(3, H, W)``."""
    g = as_grid(d)
    return np.repeat(g[None, :, :], 3, axis=0)


def average3(latent: np.ndarray) -> np.ndarray:
    """Pixel-wise mean of a 3-channel latent."""
    l = np.asarray(latent, dtype=np.float64)
    if l.ndim != 3 or l.shape[0] != 3:
        raise ShapeMismatch(f"expected (3, H, W) latent, got {l.shape}")
    return l.mean(axis=0)


def channel_consistency(latent: np.ndarray) -> tuple[float, float]:
    """Mean per-pixel channel spread of a 3-channel latent.

    Returns ``(std, range)``: the mean over pixels of the population standard
    deviation across channels and of (max - min) across channels.
    """
    l = np.asarray(latent, dtype=np.float64)
    if l.ndim != 3 or l.shape[0] != 3:
        raise ShapeMismatch(f"expected (3, H, W) latent, got {l.shape}")
    std = float(l.std(axis=0).mean())
    rng = float((l.max(axis=0) - l.min(axis=0)).mean())
    return std, rng


class IdentityCodec:
    """Shape-preserving codec: replicate to 3 channels, decode by averaging.

    Round-trips exactly; the declared round-trip MAE bound is the float64
    noise floor.
    """

    name = "identity"
    roundtrip_mae_bound = 1e-12

    def latent_shape(self, h: int, w: int) -> tuple[int, int]:
        return h, w

    def encode_depth(self, d: np.ndarray) -> np.ndarray:
        return replicate3(d)

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ShapeMismatch(f"expected (3, H, W) image, got {img.shape}")
        return img.copy()

    def decode_channels(self, latent: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        l = np.asarray(latent, dtype=np.float64)
        if l.ndim != 3 or l.shape[0] != 3:
            raise ShapeMismatch(f"expected (3, H, W) latent, got {l.shape}")
        if l.shape[1:] != (out_h, out_w):
            raise ShapeMismatch(f"identity codec cannot resize {l.shape[1:]} to {(out_h, out_w)}")
        return l.copy()

    def decode_depth(self, latent: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        return average3(self.decode_channels(latent, out_h, out_w))


class AvgPoolCodec:
    """Lossy codec: k x k average-pool encode, bilinear decode.

    Decoding samples each channel with a small per-channel phase offset
    (+/- a quarter of a latent pixel) so the three decoded channels disagree
    slightly, emulating the imperfect channel agreement of a learned decoder;
    their average is the reconstructed grid.  The declared round-trip MAE
    bound is for normalized depth of the procedural scenes.
    """

    name = "avgpool"
    roundtrip_mae_bound = 0.15
    _channel_phase = (-0.25, 0.0, 0.25)

    def __init__(self, k: int = 2):
        if k < 1:
            raise ValueError(f"pool size must be >= 1, got {k}")
        self.k = int(k)

    def latent_shape(self, h: int, w: int) -> tuple[int, int]:
        return -(-h // self.k), -(-w // self.k)

    def _pool(self, grid: np.ndarray) -> np.ndarray:
        g = as_grid(grid)
        h, w = g.shape
        k = self.k
        lh, lw = self.latent_shape(h, w)
        # edge-replicate so partial blocks average over clamped pixels
        pad_h, pad_w = lh * k - h, lw * k - w
        gp = np.pad(g, ((0, pad_h), (0, pad_w)), mode="edge")
        return gp.reshape(lh, k, lw, k).mean(axis=(1, 3))

    def encode_depth(self, d: np.ndarray) -> np.ndarray:
        pooled = self._pool(d)
        return np.repeat(pooled[None, :, :], 3, axis=0)

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ShapeMismatch(f"expected (3, H, W) image, got {img.shape}")
        return np.stack([self._pool(c) for c in img])

    def decode_channels(self, latent: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        l = np.asarray(latent, dtype=np.float64)
        if l.ndim != 3 or l.shape[0] != 3:
            raise ShapeMismatch(f"expected (3, H, W) latent, got {l.shape}")
        lh, lw = l.shape[1:]
        # target pixel centers in latent coordinates (block-center aligned)
        ys = (np.arange(out_h) + 0.5) / self.k - 0.5
        xs = (np.arange(out_w) + 0.5) / self.k - 0.5
        out = np.empty((3, out_h, out_w))
        for c, phase in enumerate(self._channel_phase):
            out[c] = _sample_bilinear(l[c], (ys + phase)[:, None], (xs + phase)[None, :])
        return out

    def decode_depth(self, latent: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        return average3(self.decode_channels(latent, out_h, out_w))


def make_codec(name: str, pool_k: int = 2):
    """Codec factory used by config/CLI layers."""
    if name == "identity":
        return IdentityCodec()
    if name == "avgpool":
        return AvgPoolCodec(pool_k)
    raise ValueError(f"unknown codec {name!r} (expected 'identity' or 'avgpool')")
