"""Lidar-to-image preprocessing and camera normalisation.

Depth images use inverse depth (1/m). Zero is the "infinity" sentinel: no
return nearby, or a failed sensor.
"""

from __future__ import annotations

import numpy as np

from robustfusion.scenegen import CameraIntrinsics

MIN_DEPTH = 0.5
DEFAULT_RADIUS = 4
# network input scale: inverse depth of 5 m maps to 1.0
DEPTH_INPUT_SCALE = 5.0


def project_points(points: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Sparse depth map [H,W] of nearest z-depth per pixel; NaN where empty.

    Points at or nearer than ``MIN_DEPTH`` (including those behind the camera)
    and points falling outside the image are dropped. Pixel indices are the
    floor of the projected coordinates.
    """
    h, w = intrinsics.image_h, intrinsics.image_w
    sparse = np.full((h, w), np.nan)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    pts = pts[pts[:, 2] > MIN_DEPTH]
    if len(pts) == 0:
        return sparse
    z = pts[:, 2]
    u = np.floor(intrinsics.cx + intrinsics.fx * pts[:, 0] / z).astype(np.int64)
    v = np.floor(intrinsics.cy + intrinsics.fy * pts[:, 1] / z).astype(np.int64)
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    u, v, z = u[inside], v[inside], z[inside]
    # write far-to-near so the nearest return wins each pixel
    order = np.argsort(-z, kind="stable")
    sparse[v[order], u[order]] = z[order]
    return sparse


def densify(sparse: np.ndarray, radius: int = DEFAULT_RADIUS) -> np.ndarray:
    """Fill a sparse depth map into a [1,H,W] inverse-depth image.

    Empty pixels take the mean of occupied pixels' inverse depth within the
    Chebyshev ``radius``, weighted by 1/(1 + euclidean pixel distance).
    Pixels with no neighbour stay 0.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    h, w = sparse.shape
    occupied = np.isfinite(sparse)
    inv = np.where(occupied, 1.0 / np.where(occupied, sparse, 1.0), 0.0)

    r = radius
    inv_p = np.pad(inv, r)
    occ_p = np.pad(occupied.astype(float), r)
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            wt = 1.0 / (1.0 + np.hypot(dy, dx))
            sl = (slice(r + dy, r + dy + h), slice(r + dx, r + dx + w))
            num += wt * inv_p[sl]
            den += wt * occ_p[sl]
    filled = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    out = np.where(occupied, inv, filled)
    return np.clip(out, 0.0, 1.0 / MIN_DEPTH)[None]


def depth_image(points: np.ndarray, intrinsics: CameraIntrinsics, radius: int = DEFAULT_RADIUS) -> np.ndarray:
    return densify(project_points(points, intrinsics), radius)


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Subtract each channel's own mean."""
    return image - image.mean(axis=(1, 2), keepdims=True)


def encode_depth(depth: np.ndarray) -> np.ndarray:
    """Scale an inverse-depth image to the network's input range."""
    return depth * DEPTH_INPUT_SCALE
