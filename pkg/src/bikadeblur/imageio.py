"""8-bit PNG I/O and image-array helpers."""

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def as_image(arr):
    """Coerce to an ``H x W x C`` float64 array, ``C`` in ``{1, 3}``."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"expected H x W x C image with C in (1, 3), got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("image must be at least 1 x 1")
    return a


def to_uint8(img):
    return np.round(np.clip(as_image(img), 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(arr):
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.shape[2] == 4:
        a = a[:, :, :3]
    return a.astype(np.float64) / 255.0


def read_image(path):
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return from_uint8(np.array(im))


def write_image(path, img):
    u8 = to_uint8(img)
    mode_img = Image.fromarray(u8[:, :, 0] if u8.shape[2] == 1 else u8)
    mode_img.save(path, format="PNG")


def list_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise ValueError(f"{directory} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def luma(img):
    """ITU-R BT.601 luma of an RGB image; grayscale passes through."""
    a = as_image(img)
    if a.shape[2] == 1:
        return a[:, :, 0]
    return 0.299 * a[:, :, 0] + 0.587 * a[:, :, 1] + 0.114 * a[:, :, 2]


def kernel_to_image(values):
    """Scale a kernel to ``[0, 1]`` by its peak for visualization."""
    v = np.asarray(values, dtype=np.float64)
    peak = v.max()
    return v / peak if peak > 0 else v
