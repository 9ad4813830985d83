"""Procedural test images.

``dead_leaves`` draws occluding discs with a power-law radius distribution,
the standard scale-invariant model of natural image statistics. It gives the
patch-recurrence prior of the kernel estimator something to work with without
shipping photographs.
"""

import numpy as np


def dead_leaves(size=256, seed=0, rmin=2.0, rmax=60.0, n_discs=6000, color=True):
    rng = np.random.default_rng(seed)
    h = w = int(size)
    channels = 3 if color else 1
    img = np.full((h, w, channels), np.nan)
    yy, xx = np.mgrid[0:h, 0:w]
    # radius density ~ r^-3 via inverse CDF
    u = rng.random(n_discs)
    radii = 1.0 / np.sqrt(u / rmin**2 + (1 - u) / rmax**2) if rmin < rmax else np.full(n_discs, rmin)
    for r in radii:
        cy, cx = rng.uniform(-r, h + r), rng.uniform(-r, w + r)
        value = rng.random(channels)
        y0, y1 = max(int(cy - r), 0), min(int(cy + r) + 2, h)
        x0, x1 = max(int(cx - r), 0), min(int(cx + r) + 2, w)
        if y0 >= y1 or x0 >= x1:
            continue
        sub = img[y0:y1, x0:x1]
        mask = ((yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2 <= r * r) & np.isnan(sub[:, :, 0])
        sub[mask] = value
        if not np.isnan(img[:, :, 0]).any():
            break
    holes = np.isnan(img)
    img[holes] = rng.random(int(holes.sum()))
    return img


def checkerboard(size=64, tile=8):
    y, x = np.mgrid[0:size, 0:size]
    return (((y // tile) + (x // tile)) % 2).astype(np.float64)[:, :, None]
