"""Blur degradation ``B = k * S + n`` and synthetic dataset generation.

Images are ``H x W x C`` float arrays in ``[0, 1]`` with ``C`` in ``{1, 3}``.
Convolution is true convolution (the kernel is flipped relative to
cross-correlation) with the kernel anchored at ``(kh // 2, kw // 2)``::

    out[y, x] = sum_{i, j} k[i, j] * img[y + kh // 2 - i, x + kw // 2 - j]
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import as_image, list_images, read_image, write_image
from .kernels import BlurKernel, BlurSpec, make_kernel

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
_PAD_MODES = {"replicate": "edge", "zero": "constant", "circular": "wrap"}


def _kernel_array(kernel):
    return kernel.values if isinstance(kernel, BlurKernel) else np.asarray(kernel, dtype=np.float64)


def _pad_for(kernel_shape, image, boundary):
    if boundary not in _PAD_MODES:
        raise ValueError(f"unknown boundary mode {boundary!r}; expected one of {sorted(_PAD_MODES)}")
    kh, kw = kernel_shape
    h, w = image.shape[:2]
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} does not fit in image {h}x{w}")
    ch, cw = kh // 2, kw // 2
    pads = ((kh - 1 - ch, ch), (kw - 1 - cw, cw), (0, 0))
    return np.pad(image, pads, mode=_PAD_MODES[boundary])


def convolve(image, kernel, boundary="replicate", method="fft"):
    """Convolve every channel of ``image`` with ``kernel``.

    ``method`` selects the frequency-domain product (``"fft"``) or the direct
    spatial sum (``"direct"``); both operate on the same padded image and agree
    to rounding error.
    """
    img = as_image(image)
    k = _kernel_array(kernel)
    if k.ndim != 2:
        raise ValueError("kernel must be 2-D")
    padded = _pad_for(k.shape, img, boundary)
    if method == "fft":
        return _convolve_fft(padded, k, img.shape)
    if method == "direct":
        return _convolve_direct(padded, k, img.shape)
    raise ValueError(f"unknown convolution method {method!r}")


def _convolve_direct(padded, k, out_shape):
    h, w = out_shape[:2]
    kh, kw = k.shape
    out = np.zeros(out_shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            if k[i, j] != 0:
                out += k[i, j] * padded[kh - 1 - i : kh - 1 - i + h, kw - 1 - j : kw - 1 - j + w]
    return out


def _convolve_fft(padded, k, out_shape):
    ph, pw = padded.shape[:2]
    kh, kw = k.shape
    kf = np.fft.rfft2(k, s=(ph, pw))
    pf = np.fft.rfft2(padded, axes=(0, 1))
    full = np.fft.irfft2(pf * kf[:, :, None], s=(ph, pw), axes=(0, 1))
    # circular wrap only touches the first kh-1 rows / kw-1 columns
    return full[kh - 1 :, kw - 1 :]


def add_noise(image, sigma, seed):
    """Add i.i.d. Gaussian noise of std ``sigma`` and clamp to ``[0, 1]``."""
    if sigma < 0:
        raise ValueError("noise sigma must be non-negative")
    img = as_image(image)
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return np.clip(img + rng.normal(0.0, sigma, size=img.shape), 0.0, 1.0)


@dataclass
class DatasetSample:
    sharp: np.ndarray
    blurred: np.ndarray
    kernel_spec: BlurSpec | str
    noise_sigma: float = 0.0
    estimated_kernel: str | None = None

    def __post_init__(self):
        if self.sharp.shape != self.blurred.shape:
            raise ValueError("sharp and blurred images must have identical dimensions")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def synthesize_blur(sharp, spec, noise_sigma=0.0, seed=0):
    img = as_image(sharp)
    k = make_kernel(spec) if isinstance(spec, BlurSpec) else spec
    blurred = convolve(img, k, boundary="replicate")
    blurred = add_noise(np.clip(blurred, 0.0, 1.0), noise_sigma, seed)
    return DatasetSample(img, blurred, spec if isinstance(spec, BlurSpec) else "custom", float(noise_sigma))


def per_sample_seed(seed, index):
    """Seed for sample ``index``; independent of generation order."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def draw_sample(seed, index, shapes, crop, bank_size):
    """Random choices for one sample: source image, crop corner, kernel, noise seed."""
    s_seed = per_sample_seed(seed, index)
    rng = np.random.default_rng(s_seed)
    src = int(rng.integers(len(shapes)))
    h, w = shapes[src]
    return {
        "seed": s_seed,
        "source": src,
        "y0": int(rng.integers(h - crop + 1)),
        "x0": int(rng.integers(w - crop + 1)),
        "kernel_index": int(rng.integers(bank_size)),
        "noise_seed": int(rng.integers(2**31)),
    }


def generate_dataset(sharp_dir, bank, crop, count, noise_sigma, seed, out_dir, split="train"):
    """Write ``count`` blurred/sharp pairs plus a ``manifest.json`` to ``out_dir``.

    Each sample draws its source image, crop window, kernel and noise from its
    own generator seeded by :func:`per_sample_seed`, so any subset of samples can
    be produced independently. Returns the manifest dict.
    """
    sources = list_images(sharp_dir)
    if not sources:
        raise ValueError(f"no decodable images in {sharp_dir}")
    if not bank:
        raise ValueError("kernel bank is empty")
    images = []
    for p in sources:
        try:
            images.append(read_image(p))
        except OSError as exc:
            raise ValueError(f"cannot decode {p}: {exc}") from exc
    smallest = min(min(im.shape[:2]) for im in images)
    if crop > smallest:
        raise ValueError(f"crop {crop} exceeds smallest source dimension {smallest}")

    out = Path(out_dir)
    (out / "sharp").mkdir(parents=True, exist_ok=True)
    (out / "blurred").mkdir(parents=True, exist_ok=True)
    kernels = [make_kernel(s) for s in bank]

    records = []
    shapes = [im.shape[:2] for im in images]
    for idx in range(count):
        draw = draw_sample(seed, idx, shapes, crop, len(bank))
        im = images[draw["source"]]
        y0, x0 = draw["y0"], draw["x0"]
        kidx = draw["kernel_index"]
        sharp = im[y0 : y0 + crop, x0 : x0 + crop]
        blurred = np.clip(convolve(sharp, kernels[kidx], "replicate"), 0.0, 1.0)
        blurred = add_noise(blurred, noise_sigma, draw["noise_seed"])
        sid = f"{idx:05d}"
        write_image(out / "sharp" / f"{sid}.png", sharp)
        write_image(out / "blurred" / f"{sid}.png", blurred)
        records.append(
            {
                "id": sid,
                "sharp_path": f"sharp/{sid}.png",
                "blurred_path": f"blurred/{sid}.png",
                "kernel_index": kidx,
                "per_sample_seed": draw["seed"],
                "source": Path(sources[draw["source"]]).name,
                "estimated_kernel": None,
            }
        )

    manifest = {
        "version": MANIFEST_VERSION,
        "split": split,
        "seed": int(seed),
        "crop": int(crop),
        "noise_sigma": float(noise_sigma),
        "bank": [s.to_dict() for s in bank],
        "samples": records,
    }
    write_manifest(out / "manifest.json", manifest)
    log.info("wrote %d samples to %s", count, out)
    return manifest


def write_manifest(path, manifest):
    public = {k: v for k, v in manifest.items() if not k.startswith("_")}
    Path(path).write_text(json.dumps(public, indent=2, sort_keys=True) + "\n")


def read_manifest(path):
    path = Path(path)
    manifest = json.loads(path.read_text())
    if len(manifest.get("samples", [])) == 0:
        raise ValueError(f"{path}: manifest has no samples")
    manifest["_root"] = str(path.parent)
    return manifest


def manifest_root(manifest):
    return Path(manifest.get("_root", "."))


def manifest_bank(manifest):
    return [BlurSpec.from_dict(d) for d in manifest["bank"]]


def load_sample(manifest, record):
    root = manifest_root(manifest)
    return read_image(root / record["sharp_path"]), read_image(root / record["blurred_path"])


def wiener_deconvolve(blurred, kernel, nsr=0.0):
    """Frequency-domain Wiener estimate ``conj(K) B / (|K|^2 + nsr)``.

    The kernel spectrum assumes circular boundaries. With ``nsr = 0`` the
    denominator is floored at the smallest normal float, which only matters
    where ``K`` is exactly zero (and the numerator is zero too).
    """
    if nsr < 0:
        raise ValueError("nsr must be non-negative")
    img = as_image(blurred)
    k = _kernel_array(kernel)
    h, w = img.shape[:2]
    kh, kw = k.shape
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} does not fit in image {h}x{w}")
    otf = np.zeros((h, w))
    otf[:kh, :kw] = k
    otf = np.roll(otf, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    K = np.fft.fft2(otf)
    denom = np.maximum(np.abs(K) ** 2 + nsr, np.finfo(np.float64).tiny)
    filt = np.conj(K) / denom
    Bf = np.fft.fft2(img, axes=(0, 1))
    out = np.real(np.fft.ifft2(Bf * filt[:, :, None], axes=(0, 1)))
    return np.clip(out, 0.0, 1.0)
