"""Affine-invariant evaluation: least-squares alignment, AbsRel and delta1.

Predictions are compared to ground truth only after fitting a global scale
and shift over the valid pixels (in depth space, or in disparity space
against inverse ground truth); the metrics are the mean absolute relative
error and the fraction of pixels whose depth ratio stays below 1.25.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask, NonPositiveGroundTruth, SingularFit
from .grids import as_grid, as_mask

__all__ = [
    "AlignedPrediction",
    "MetricReport",
    "lsq_align",
    "absrel",
    "delta1",
    "evaluate",
]

_DISPARITY_EPS = 1e-8


@dataclass(frozen=True)
class AlignedPrediction:
    """Fitted scale/shift and the prediction mapped into ground-truth units."""

    s: float
    t: float
    a: np.ndarray
    space: str


@dataclass(frozen=True)
class MetricReport:
    """Metric pair plus the alignment that produced it."""

    absrel: float
    delta1: float
    valid_px: int
    s: float
    t: float
    negative_scale: bool


def lsq_align(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray, space: str = "depth") -> AlignedPrediction:
    """Closed-form least-squares fit of ``pred * s + t`` to the ground truth.

    In disparity space the prediction is fitted to the inverse ground-truth
    depth and the aligned disparity is inverted back to depth (clamping
    non-positive disparities to a tiny epsilon) so metrics are always
    computed in depth units.
    """
    p = as_grid(pred)
    g = as_grid(gt)
    if space not in ("depth", "disparity"):
        raise ValueError(f"space must be 'depth' or 'disparity', got {space!r}")
    m = as_mask(mask, p.shape)
    if p.shape != g.shape:
        raise ValueError(f"pred shape {p.shape} != gt shape {g.shape}")
    if m.sum() < 2:
        raise EmptyMask("alignment needs at least two valid pixels")
    pv = p[m]
    if space == "disparity":
        gv_full = g[m]
        if np.any(gv_full <= 0):
            raise NonPositiveGroundTruth("disparity alignment needs positive ground truth")
        gv = 1.0 / gv_full
    else:
        gv = g[m]
    if pv.var() < 1e-12:
        raise SingularFit("prediction is (near-)constant on valid pixels")
    n = pv.size
    sp, spp = pv.sum(), float(pv @ pv)
    sg, spg = gv.sum(), float(pv @ gv)
    det = spp * n - sp * sp
    s = (spg * n - sp * sg) / det
    t = (spp * sg - sp * spg) / det
    fitted = p * s + t
    if space == "disparity":
        a = 1.0 / np.maximum(fitted, _DISPARITY_EPS)
    else:
        a = fitted
    return AlignedPrediction(s=float(s), t=float(t), a=a, space=space)


def absrel(a: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Mean over valid pixels of |a - gt| / gt."""
    av = as_grid(a)
    g = as_grid(gt)
    m = as_mask(mask, av.shape)
    if not m.any():
        raise EmptyMask("absrel needs at least one valid pixel")
    gv = g[m]
    if np.any(gv <= 0):
        raise NonPositiveGroundTruth("absrel needs positive ground truth")
    return float(np.mean(np.abs(av[m] - gv) / gv))


def delta1(a: np.ndarray, gt: np.ndarray, mask: np.ndarray, threshold: float = 1.25) -> float:
    """Fraction of valid pixels with max(a/gt, gt/a) strictly below the threshold.

    Non-positive aligned values count as failures rather than crashing batch
    evaluation.  The threshold is exposed only for monotonicity testing.
    """
    av = as_grid(a)
    g = as_grid(gt)
    m = as_mask(mask, av.shape)
    if not m.any():
        raise EmptyMask("delta1 needs at least one valid pixel")
    gv = g[m]
    if np.any(gv <= 0):
        raise NonPositiveGroundTruth("delta1 needs positive ground truth")
    avm = av[m]
    ok = avm > 0
    ratio = np.where(ok, np.maximum(np.divide(avm, gv, where=ok, out=np.ones_like(avm)),
                                    np.divide(gv, avm, where=ok, out=np.ones_like(avm))),
                     np.inf)
    return float(np.mean(ratio < threshold))


def evaluate(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray, space: str = "depth") -> MetricReport:
    """Align then score; the composition used everywhere downstream."""
    aligned = lsq_align(pred, gt, mask, space=space)
    return MetricReport(
        absrel=absrel(aligned.a, gt, mask),
        delta1=delta1(aligned.a, gt, mask),
        valid_px=int(np.asarray(mask, dtype=bool).sum()),
        s=aligned.s,
        t=aligned.t,
        negative_scale=aligned.s < 0,
    )
