"""Seeded Gaussian noise and (annealed) multi-resolution pyramid noise.

Pyramid level i is an independent N(0,1) image at 1/2^i resolution
(floor-clamped to 1x1), bilinearly upsampled to full size and weighted by
``s**i`` for plain multi-resolution noise or ``(s*t/T)**i`` for the annealed
variant, which degenerates to white Gaussian noise at t=0.  After the
analytic renormalization by sqrt(sum of squared weights), the result is
standardized exactly to zero mean / unit variance over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import resize_bilinear

__all__ = [
    "NoiseSpec",
    "NOISE_KINDS",
    "default_levels",
    "gaussian_noise",
    "multires_noise",
    "substream",
]

NOISE_KINDS = ("gaussian", "multires", "annealed_multires")


@dataclass(frozen=True)
class NoiseSpec:
    """Which noise to draw, its strength/depth, and its seed."""

    kind: str = "gaussian"
    s: float = 0.9
    levels: int | None = None  # None: full octaves down to 1x1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.kind != "gaussian":
            if not (0.0 < self.s < 1.0):
                raise ValueError(f"strength s must lie in (0, 1), got {self.s}")
            if self.levels is not None and self.levels < 1:
                raise ValueError(f"levels must be >= 1, got {self.levels}")


def default_levels(h: int, w: int) -> int:
    """Pyramid depth covering all full octaves from the grid size down to 1."""
    return int(np.floor(np.log2(min(h, w)))) + 1


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of a root seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def gaussian_noise(h: int, w: int, seed: int) -> np.ndarray:
    """I.i.d. standard normal grid, deterministic for a fixed seed."""
    return np.random.default_rng(seed).standard_normal((h, w))


def multires_noise(h: int, w: int, spec: NoiseSpec, t: int, T: int) -> np.ndarray:
    """Noise grid for the given spec; ``t``/``T`` drive the annealed weights."""
    if spec.kind == "gaussian":
        return gaussian_noise(h, w, spec.seed)
    if not (0 <= t <= T):
        raise ValueError(f"need 0 <= t <= T, got t={t}, T={T}")
    levels = spec.levels if spec.levels is not None else default_levels(h, w)
    if spec.kind == "multires":
        base = spec.s
    else:
        base = spec.s * t / T
    weights = base ** np.arange(levels)
    total = np.zeros((h, w))
    for i in range(levels):
        if weights[i] == 0.0 and i > 0:
            continue
        lh, lw = max(1, h >> i), max(1, w >> i)
        sample = substream(spec.seed, i).standard_normal((lh, lw))
        level = sample if i == 0 else resize_bilinear(sample, h, w)
        total += weights[i] * level
    total /= np.sqrt(np.sum(weights**2))
    if total.size > 1:
        std = total.std()
        total = (total - total.mean()) / std if std > 0 else total - total.mean()
    return total
