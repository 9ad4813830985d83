"""Per-pixel linear motion blur from a flow field.

Each output pixel averages ``steps`` bilinear samples of the sharp image taken
uniformly along the segment ``[-flow / 2, +flow / 2]`` centered on the pixel.
Flow is ``H x W x 2`` with ``(u, v)`` = (horizontal, vertical) displacement in
pixels. Samples outside the image take the nearest edge value.
"""

import numpy as np
from scipy.ndimage import map_coordinates

from .imageio import as_image


def synthesize_motion_blur(sharp, flow, steps=17):
    img = as_image(sharp)
    flow = np.asarray(flow, dtype=np.float64)
    h, w = img.shape[:2]
    if flow.shape != (h, w, 2):
        raise ValueError(f"flow must be {h}x{w}x2, got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ts = np.linspace(-0.5, 0.5, steps) if steps > 1 else np.zeros(1)
    out = np.zeros_like(img)
    for t in ts:
        coords = [yy + t * flow[:, :, 1], xx + t * flow[:, :, 0]]
        for c in range(img.shape[2]):
            out[:, :, c] += map_coordinates(img[:, :, c], coords, order=1, mode="nearest")
    return out / len(ts)


def linear_flow(h, w, u, v):
    """Spatially constant flow field."""
    f = np.empty((h, w, 2))
    f[:, :, 0] = u
    f[:, :, 1] = v
    return f


def random_flow(h, w, max_len=9.0, seed=0):
    """Smoothly varying flow: an affine field (rotation about a random center + translation)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    omega = rng.uniform(-1, 1) * max_len / max(h, w)
    tu, tv = rng.uniform(-1, 1, size=2) * max_len / 2
    u = tu - omega * (yy - cy)
    v = tv + omega * (xx - cx)
    mag = np.sqrt(u * u + v * v)
    scale = np.minimum(1.0, max_len / np.maximum(mag, 1e-12))
    return np.stack([u * scale, v * scale], axis=-1)
