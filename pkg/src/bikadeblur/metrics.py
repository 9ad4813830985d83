"""PSNR and SSIM, plus dataset-level evaluation reports.

PSNR pools all channels. SSIM runs on BT.601 luma with an 11x11 Gaussian
window (sigma 1.5), ``C1 = (0.01 L)^2``, ``C2 = (0.03 L)^2`` and averages over
valid window positions only (no padding).
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .imageio import as_image, luma, read_image

REPORT_VERSION = 1
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _same_shape(a, b):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_val=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable valid-mode correlation; window is symmetric
    n = g.size
    h, w = img.shape
    rows = sum(g[i] * img[i : h - n + 1 + i, :] for i in range(n))
    return sum(g[j] * rows[:, j : w - n + 1 + j] for j in range(n))


def ssim(a, b, max_val=1.0):
    a, b = _same_shape(a, b)
    ya, yb = luma(a), luma(b)
    if min(ya.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    g = _gaussian_window()
    mu_a = _filter_valid(ya, g)
    mu_b = _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a * mu_a
    var_b = _filter_valid(yb * yb, g) - mu_b * mu_b
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _json_float(x):
    return "inf" if math.isinf(x) else x


def aggregate(per_image):
    ok = [r for r in per_image if r.get("psnr") is not None]
    n = len(ok)
    if n == 0:
        return {"mean_psnr": None, "mean_ssim": None, "count": 0}
    ps = [math.inf if r["psnr"] == "inf" else r["psnr"] for r in ok]
    return {
        "mean_psnr": _json_float(float(np.mean(ps))),
        "mean_ssim": float(np.mean([r["ssim"] for r in ok])),
        "count": n,
    }


def evaluate(manifest, restored_dir, dataset=None, checkpoint=None):
    """Score restored images ``<restored_dir>/<id>.png`` against manifest sharps.

    Missing restorations are listed under ``aggregate.failures`` and left out of
    the means.
    """
    from .degradation import manifest_root

    root = manifest_root(manifest)
    restored_dir = Path(restored_dir)
    per_image, failures = [], []
    for rec in manifest["samples"]:
        path = restored_dir / f"{rec['id']}.png"
        if not path.exists():
            failures.append(rec["id"])
            continue
        sharp = read_image(root / rec["sharp_path"])
        restored = read_image(path)
        per_image.append(
            {"id": rec["id"], "psnr": _json_float(psnr(restored, sharp)), "ssim": ssim(restored, sharp)}
        )
    agg = aggregate(per_image)
    agg["failures"] = failures
    return {
        "version": REPORT_VERSION,
        "dataset": dataset,
        "checkpoint": checkpoint,
        "per_image": per_image,
        "aggregate": agg,
    }


def write_report(path, report):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def read_report(path):
    return json.loads(Path(path).read_text())


def format_report(report):
    lines = [f"{'id':>8}  {'PSNR (dB)':>10}  {'SSIM':>7}"]
    for r in report["per_image"]:
        p = r["psnr"]
        lines.append(f"{r['id']:>8}  {p if p == 'inf' else f'{p:10.4f}':>10}  {r['ssim']:7.4f}")
    agg = report["aggregate"]
    mp = agg["mean_psnr"]
    if agg["count"]:
        mp_s = mp if mp == "inf" else f"{mp:.4f}"
        lines.append(f"mean over {agg['count']}: PSNR {mp_s} dB, SSIM {agg['mean_ssim']:.4f}")
    if agg.get("failures"):
        lines.append(f"missing: {', '.join(agg['failures'])}")
    return "\n".join(lines)
