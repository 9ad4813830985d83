"""Parametric blur kernels: construction, comparison and serialization.

Kernels are sampled on the centered integer grid (no pixel-area integration),
truncated to the ``size x size`` window and renormalized to sum 1. Row index
``i`` is the vertical coordinate ``y = i - c`` and column index ``j`` the
horizontal coordinate ``x = j - c``; ``sigma_x`` runs along ``x`` at
``theta = 0`` and ``theta`` rotates the principal axis counter-clockwise in
the ``(x, y)`` frame.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

__all__ = [
    "BlurSpec",
    "BlurKernel",
    "KernelDistance",
    "make_isotropic_gaussian",
    "make_anisotropic_gaussian",
    "make_kernel",
    "make_default_bank",
    "default_bank_specs",
    "delta_kernel",
    "kernel_distance",
    "kernel_centroid",
    "kernel_covariance",
    "principal_angle",
    "save_kernel",
    "load_kernel",
    "save_bank",
    "load_bank",
    "DEFAULT_KERNEL_SIZE",
]

DEFAULT_KERNEL_SIZE = 17
KERN_MAGIC = b"KERN1"


def _check_size(size):
    if int(size) != size or size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be an odd integer >= 3, got {size!r}")
    return int(size)


@dataclass(frozen=True)
class BlurSpec:
    kind: str
    size: int = DEFAULT_KERNEL_SIZE
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("isotropic", "anisotropic"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        _check_size(self.size)
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ValueError("sigma_x and sigma_y must be positive")
        if self.kind == "isotropic" and (self.sigma_x != self.sigma_y or self.theta != 0):
            raise ValueError("isotropic spec requires sigma_x == sigma_y and theta == 0")

    @classmethod
    def isotropic(cls, sigma, size=DEFAULT_KERNEL_SIZE):
        return cls("isotropic", size, float(sigma), float(sigma), 0.0)

    @classmethod
    def anisotropic(cls, sigma_x, sigma_y, theta, size=DEFAULT_KERNEL_SIZE):
        return cls("anisotropic", size, float(sigma_x), float(sigma_y), float(theta))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            size=int(d["size"]),
            sigma_x=float(d["sigma_x"]),
            sigma_y=float(d["sigma_y"]),
            theta=float(d["theta"]),
        )


@dataclass
class BlurKernel:
    """A normalized, non-negative 2-D blur kernel.

    ``spec`` is absent for kernels that were estimated or loaded from disk.
    """

    values: np.ndarray
    spec: BlurSpec | None = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("kernel values must be a 2-D array")
        if np.any(v < 0):
            raise ValueError("kernel entries must be non-negative")
        if abs(v.sum() - 1.0) > 1e-6:
            raise ValueError(f"kernel must sum to 1, sums to {v.sum():.8g}")
        self.values = v

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.shape[0]

    @classmethod
    def from_array(cls, arr, spec=None):
        """Clamp negatives and renormalize an arbitrary array into a kernel."""
        v = np.clip(np.asarray(arr, dtype=np.float64), 0.0, None)
        s = v.sum()
        if not np.isfinite(s) or s <= 0:
            raise ValueError("cannot normalize a kernel with no positive mass")
        return cls(v / s, spec)


def _grid(size):
    c = (size - 1) / 2.0
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    return x - c, y - c


def make_isotropic_gaussian(size, sigma):
    size = _check_size(size)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x, y = _grid(size)
    v = np.exp(-(x**2 + y**2) / (2.0 * sigma**2))
    return BlurKernel(v / v.sum(), BlurSpec.isotropic(sigma, size))


def make_anisotropic_gaussian(size, sigma_x, sigma_y, theta):
    size = _check_size(size)
    if not (sigma_x > 0 and sigma_y > 0):
        raise ValueError("sigma_x and sigma_y must be positive")
    theta = float(np.mod(theta, np.pi))
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    cov = rot @ np.diag([sigma_x**2, sigma_y**2]) @ rot.T
    inv = np.linalg.inv(cov)
    x, y = _grid(size)
    q = inv[0, 0] * x * x + 2.0 * inv[0, 1] * x * y + inv[1, 1] * y * y
    v = np.exp(-0.5 * q)
    return BlurKernel(v / v.sum(), BlurSpec.anisotropic(sigma_x, sigma_y, theta, size))


def make_kernel(spec):
    if spec.kind == "isotropic":
        return make_isotropic_gaussian(spec.size, spec.sigma_x)
    return make_anisotropic_gaussian(spec.size, spec.sigma_x, spec.sigma_y, spec.theta)


def default_bank_specs(size=DEFAULT_KERNEL_SIZE):
    specs = [BlurSpec.isotropic(s, size) for s in (1.0, 2.0, 3.0, 4.0)]
    for sx, sy in ((3.0, 1.0), (4.0, 1.5)):
        for m in range(6):
            specs.append(BlurSpec.anisotropic(sx, sy, m * np.pi / 6, size))
    return specs


def make_default_bank(size=DEFAULT_KERNEL_SIZE):
    """The 16-kernel bank: 4 isotropic widths, then 12 rotated anisotropic."""
    return [make_kernel(s) for s in default_bank_specs(size)]


def delta_kernel(size=DEFAULT_KERNEL_SIZE):
    size = _check_size(size)
    v = np.zeros((size, size))
    v[size // 2, size // 2] = 1.0
    return BlurKernel(v)


class KernelDistance(NamedTuple):
    plain: float
    shift_tolerant: float


def _values(k):
    return k.values if isinstance(k, BlurKernel) else np.asarray(k, dtype=np.float64)


def _shift_zero(a, dy, dx):
    out = np.zeros_like(a)
    h, w = a.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = a[ys, xs]
    return out


def kernel_distance(a, b, max_shift=2):
    """L2 distance between two kernels, plain and minimized over integer shifts.

    Shifts move ``b`` by up to ``max_shift`` pixels in each axis with zero fill.
    """
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape:
        raise ValueError(f"kernel size mismatch: {va.shape} vs {vb.shape}")
    plain = float(np.sqrt(np.sum((va - vb) ** 2)))
    best = plain
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            d = float(np.sqrt(np.sum((va - _shift_zero(vb, dy, dx)) ** 2)))
            best = min(best, d)
    return KernelDistance(plain, best)


def kernel_centroid(k):
    """Centroid ``(x, y)`` in pixels relative to the window center."""
    v = _values(k)
    x, y = _rect_grid(v.shape)
    m = v.sum()
    return np.array([(v * x).sum() / m, (v * y).sum() / m])


def _rect_grid(shape):
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    return x - (w - 1) / 2.0, y - (h - 1) / 2.0


def kernel_covariance(k):
    """Second central moments ``[[xx, xy], [xy, yy]]`` of a kernel."""
    v = _values(k)
    x, y = _rect_grid(v.shape)
    m = v.sum()
    cx, cy = (v * x).sum() / m, (v * y).sum() / m
    dx, dy = x - cx, y - cy
    return np.array(
        [
            [(v * dx * dx).sum() / m, (v * dx * dy).sum() / m],
            [(v * dx * dy).sum() / m, (v * dy * dy).sum() / m],
        ]
    )


def principal_angle(k):
    """Orientation of the major axis in radians, in ``[0, pi)``."""
    cov = kernel_covariance(k)
    w, vecs = np.linalg.eigh(cov)
    major = vecs[:, np.argmax(w)]
    return float(np.mod(np.arctan2(major[1], major[0]), np.pi))


def save_kernel(path, kernel):
    """Write a kernel in the KERN1 binary format."""
    v = np.ascontiguousarray(_values(kernel), dtype="<f4")
    h, w = v.shape
    with open(path, "wb") as f:
        f.write(KERN_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(v.tobytes(order="C"))


def load_kernel(path, normalize=True):
    data = Path(path).read_bytes()
    if data[:5] != KERN_MAGIC:
        raise ValueError(f"{path}: not a KERN1 file")
    h, w = struct.unpack("<II", data[5:13])
    body = data[13:]
    if len(body) != 4 * h * w:
        raise ValueError(f"{path}: truncated kernel payload")
    v = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
    if not normalize:
        return v
    return BlurKernel.from_array(v)


def bank_to_json(specs):
    return json.dumps([s.to_dict() for s in specs], indent=2)


def save_bank(path, specs):
    Path(path).write_text(bank_to_json(specs) + "\n")


def load_bank(path):
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, list):
        raise ValueError("bank manifest must be a JSON array of kernel specs")
    return [BlurSpec.from_dict(d) for d in raw]
