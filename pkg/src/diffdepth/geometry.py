"""Pinhole unprojection and plane-fit normal maps for 3-D visualization.

Depth here is z-depth (distance along the optical axis), so unprojection is
``((u - cx) * z / fx, (v - cy) * z / fy, z)`` with u the column and v the row.
Normals come from a least-squares plane through the unprojected 3x3
neighborhood of each pixel, solved with a closed-form symmetric 3x3
eigendecomposition and oriented toward the camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonPositiveDepth
from .grids import as_grid, as_mask

__all__ = [
    "Intrinsics",
    "PointCloud",
    "unproject",
    "normals_from_depth",
    "write_ply",
    "normals_to_png",
]


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")

    @classmethod
    def for_resolution(cls, h: int, w: int, fov_deg: float = 60.0) -> "Intrinsics":
        f = 0.5 * w / np.tan(np.radians(fov_deg) / 2.0)
        return cls(fx=f, fy=f, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0)


@dataclass(frozen=True)
class PointCloud:
    """Per-pixel camera-space points (H, W, 3) with a validity mask."""

    points: np.ndarray
    mask: np.ndarray


def unproject(depth: np.ndarray, mask: np.ndarray, K: Intrinsics) -> PointCloud:
    """Lift each valid pixel to a 3-D point; z equals the source depth."""
    d = as_grid(depth)
    m = as_mask(mask, d.shape)
    if np.any(d[m] <= 0):
        raise NonPositiveDepth("unprojection needs positive depth on valid pixels")
    h, w = d.shape
    us = np.arange(w)[None, :]
    vs = np.arange(h)[:, None]
    x = (us - K.cx) * d / K.fx
    y = (vs - K.cy) * d / K.fy
    points = np.stack([x, y, d], axis=-1)
    points[~m] = 0.0
    return PointCloud(points=points, mask=m)


def _smallest_eigenvector_sym3(cov: np.ndarray):
    """Closed-form smallest eigenpair of symmetric 3x3 matrices, batched.

    ``cov`` has shape (..., 3, 3).  Returns (eigenvalues ascending (..., 3),
    eigenvector of the smallest (..., 3), ok flag) using the trigonometric
    solution for the characteristic cubic; eigenvectors come from cross
    products of rows of (A - lambda*I).
    """
    a = cov
    q = np.trace(a, axis1=-2, axis2=-1) / 3.0
    a_q = a - q[..., None, None] * np.eye(3)
    p2 = np.sum(a_q**2, axis=(-2, -1))
    p = np.sqrt(np.maximum(p2 / 6.0, 0.0))
    safe_p = np.where(p > 0, p, 1.0)
    b = a_q / safe_p[..., None, None]
    detb = np.linalg.det(b)
    r = np.clip(detb / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e_hi = q + 2.0 * p * np.cos(phi)
    e_lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e_mid = 3.0 * q - e_hi - e_lo
    eigs = np.stack([e_lo, e_mid, e_hi], axis=-1)

    m = a - e_lo[..., None, None] * np.eye(3)
    c01 = np.cross(m[..., 0, :], m[..., 1, :])
    c02 = np.cross(m[..., 0, :], m[..., 2, :])
    c12 = np.cross(m[..., 1, :], m[..., 2, :])
    cands = np.stack([c01, c02, c12], axis=-2)
    norms = np.linalg.norm(cands, axis=-1)
    pick = norms.argmax(axis=-1)
    vec = np.take_along_axis(cands, pick[..., None, None], axis=-2)[..., 0, :]
    best = np.take_along_axis(norms, pick[..., None], axis=-1)[..., 0]
    scale = np.maximum(np.abs(e_hi), 1.0)
    ok = (p > 0) & (best > 1e-14 * scale**2)
    vec = vec / np.where(best > 0, best, 1.0)[..., None]
    return eigs, vec, ok


def normals_from_depth(depth: np.ndarray, mask: np.ndarray, K: Intrinsics):
    """Per-pixel unit normals from plane fits over 3x3 point neighborhoods.

    Returns ``(normals (3, H, W), valid (H, W))``; pixels whose window has
    fewer than 3 valid points, or collinear points, are marked invalid.
    Normals are oriented toward the camera.
    """
    cloud = unproject(depth, mask, K)
    pts, m = cloud.points, cloud.mask
    h, w = m.shape
    pp = np.pad(pts, ((1, 1), (1, 1), (0, 0)))
    mp = np.pad(m, 1).astype(np.float64)
    pw = sliding_window_view(pp, (3, 3), axis=(0, 1))      # (H, W, 3, 3, 3)
    mw = sliding_window_view(mp, (3, 3), axis=(0, 1))      # (H, W, 3, 3)

    counts = mw.sum(axis=(-2, -1))
    safe_counts = np.maximum(counts, 1.0)
    sums = (pw * mw[..., None, :, :]).sum(axis=(-2, -1))
    means = sums / safe_counts[..., None]
    cov = np.empty((h, w, 3, 3))
    for i in range(3):
        for j in range(i, 3):
            sij = (pw[..., i, :, :] * pw[..., j, :, :] * mw).sum(axis=(-2, -1))
            cij = sij / safe_counts - means[..., i] * means[..., j]
            cov[..., i, j] = cij
            cov[..., j, i] = cij

    eigs, vec, ok = _smallest_eigenvector_sym3(cov)
    lam_mid, lam_hi = eigs[..., 1], eigs[..., 2]
    planar = lam_mid > 1e-9 * np.maximum(lam_hi, 1e-30)
    valid = m & (counts >= 3) & ok & planar

    flip = np.sum(vec * means, axis=-1) > 0
    vec = np.where(flip[..., None], -vec, vec)
    normals = np.moveaxis(vec, -1, 0)
    normals[:, ~valid] = 0.0
    return normals, valid


def write_ply(cloud: PointCloud, path, colors: np.ndarray | None = None) -> None:
    """ASCII PLY export of the valid points, optionally with RGB colors."""
    m = cloud.mask
    pts = cloud.points[m]
    has_color = colors is not None
    if has_color:
        col = (np.moveaxis(np.asarray(colors), 0, -1)[m] * 255).round().astype(int)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {pts.shape[0]}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        if has_color:
            f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write("end_header\n")
        for idx in range(pts.shape[0]):
            x, y, z = pts[idx]
            if has_color:
                r, g, b = col[idx]
                f.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
            else:
                f.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


def normals_to_png(normals: np.ndarray, valid: np.ndarray, path) -> None:
    """Normal map as PNG, mapping [-1, 1] to [0, 255]; invalid pixels black."""
    from PIL import Image

    arr = np.clip((np.moveaxis(normals, 0, -1) + 1.0) * 0.5, 0.0, 1.0)
    img = (arr * 255).round().astype(np.uint8)
    img[~valid] = 0
    Image.fromarray(img, mode="RGB").save(path)
