"""Per-image blur-kernel estimation with an internal patch GAN.

A deep *linear* generator (no bias, no nonlinearity, stride 1) learns to blur
patches so that a patch discriminator cannot tell them from patches of the
blurred input. Because the generator is linear its whole action is a single
convolution, and the blur kernel is read off by pushing an impulse through it.

The generator is fed patches of the input downscaled by ``scale``. Blur
shrinks by the same factor under downscaling while natural image statistics
are roughly scale invariant, so the downscaled image stands in for the unseen
sharp image. The generator then learns the residual kernel ``r`` with
``k = r * down(k)``; :func:`unroll_cross_scale` solves that fixed point.
Feeding the generator ``B`` itself would make the identity kernel optimal.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import degradation
from .imageio import as_image, luma, read_image
from .kernels import DEFAULT_KERNEL_SIZE, BlurKernel, delta_kernel, save_kernel

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    pass


@dataclass
class EstimationConfig:
    iterations: int = 3000
    patch_size: int = 32
    batch: int = 8
    lr_gen: float = 2e-4
    lr_disc: float = 2e-4
    reg_weights: dict = field(
        default_factory=lambda: {"sum_to_one": 0.5, "boundary": 0.5, "sparsity": 5.0, "centrality": 1.0}
    )
    seed: int = 0
    kernel_size: int = DEFAULT_KERNEL_SIZE
    gen_layers: tuple = (7, 5, 5, 3, 3, 1)
    gen_channels: int = 32
    disc_channels: int = 32
    disc_layers: int = 6
    scale: float = 2.0
    sparsity_power: float = 0.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.patch_size <= 7:
            raise ValueError("patch_size must exceed the discriminator receptive field (7)")

    @property
    def receptive_field(self):
        return sum(self.gen_layers) - len(self.gen_layers) + 1


class BlurGenerator(nn.Module):
    """Linear stack of true convolutions on single-channel images."""

    def __init__(self, sizes=(7, 5, 5, 3, 3, 1), channels=32):
        super().__init__()
        chans = [1] + [channels] * (len(sizes) - 1) + [1]
        self.weights = nn.ParameterList(
            [nn.Parameter(torch.zeros(chans[i + 1], chans[i], s, s)) for i, s in enumerate(sizes)]
        )
        self.reset_to_identity()

    @property
    def receptive_field(self):
        return sum(w.shape[-1] for w in self.weights) - len(self.weights) + 1

    @torch.no_grad()
    def reset_to_identity(self, noise=0.0, generator=None):
        """Set the composed kernel to a centered impulse, plus optional noise."""
        for w in self.weights:
            w.zero_()
            o, i, s, _ = w.shape
            c = s // 2
            if i == 1:
                w[:, 0, c, c] = 1.0
            elif o == 1:
                w[0, :, c, c] = 1.0 / i
            else:
                w[:, :, c, c] = torch.eye(o, i)
            if noise > 0:
                w.add_(noise * torch.randn(w.shape, generator=generator, dtype=w.dtype) / math.sqrt(i * s * s))

    def forward(self, x):
        # valid-mode true convolution per layer
        for w in self.weights:
            x = F.conv2d(x, w.flip(-1, -2))
        return x

    def composed_kernel(self):
        """Full (uncropped) kernel of the stack, differentiable."""
        rf = self.receptive_field
        n = 2 * rf - 1
        impulse = torch.zeros(1, 1, n, n, dtype=self.weights[0].dtype, device=self.weights[0].device)
        impulse[0, 0, rf - 1, rf - 1] = 1.0
        return self(impulse)[0, 0]


def spectral(m):
    return nn.utils.parametrizations.spectral_norm(m)


class PatchDiscriminator(nn.Module):
    """Fully convolutional realness map; 7x7 receptive field, then 1x1 layers."""

    def __init__(self, in_channels=1, channels=32, layers=6):
        super().__init__()
        mods = [spectral(nn.Conv2d(in_channels, channels, 7, bias=True))]
        for _ in range(layers - 2):
            mods += [
                spectral(nn.Conv2d(channels, channels, 1, bias=True)),
                nn.BatchNorm2d(channels),
                nn.ReLU(inplace=True),
            ]
        mods += [spectral(nn.Conv2d(channels, 1, 1, bias=True)), nn.Sigmoid()]
        self.body = nn.Sequential(*mods)

    def forward(self, x):
        return self.body(x)


def compose_layers(layers):
    """Full convolution of a list of 2-D layer kernels (numpy)."""
    from scipy.signal import convolve2d

    out = np.array([[1.0]])
    for k in layers:
        out = convolve2d(out, np.asarray(k, dtype=np.float64), mode="full")
    return out


def crop_about_centroid(k, size, max_outside=0.05):
    """Crop a square window of ``size`` centered on the (rounded) mass centroid."""
    k = np.asarray(k, dtype=np.float64)
    h, w = k.shape
    pad = size
    kp = np.pad(k, pad)
    pos = np.clip(kp, 0, None)
    m = pos.sum()
    if m <= 0:
        raise EstimationError("composed kernel has no positive mass")
    yy, xx = np.mgrid[0 : kp.shape[0], 0 : kp.shape[1]]
    cy = int(round((pos * yy).sum() / m))
    cx = int(round((pos * xx).sum() / m))
    r = size // 2
    out = kp[cy - r : cy + r + 1, cx - r : cx + r + 1]
    outside = 1.0 - np.abs(out).sum() / np.abs(kp).sum()
    if outside > max_outside:
        raise EstimationError(f"{outside:.1%} of kernel mass falls outside the {size}x{size} window")
    return out


def extract_kernel(gen, size=DEFAULT_KERNEL_SIZE):
    """Read the blur kernel off a generator.

    Accepts a :class:`BlurGenerator` or a list of 2-D layer kernels. The
    composed kernel is cropped to ``size`` about its centroid, negatives are
    clamped and the result renormalized.
    """
    if isinstance(gen, BlurGenerator):
        with torch.no_grad():
            raw = gen.composed_kernel().double().cpu().numpy()
    else:
        raw = compose_layers(gen)
    if raw.shape[0] < size:
        p = (size - raw.shape[0]) // 2
        raw = np.pad(raw, p)
    return BlurKernel.from_array(crop_about_centroid(raw, size))


def _boundary_mask(size, inner=0.25):
    """Zero within ``inner * size`` of the center, rising linearly to 1 at the corners."""
    c = (size - 1) / 2.0
    y, x = np.mgrid[0:size, 0:size]
    d = np.sqrt((x - c) ** 2 + (y - c) ** 2)
    r0 = inner * size
    return np.clip(d - r0, 0, None) / (d.max() - r0)


def kernel_regularization(k_raw, weights=None, power=0.5, eps=1e-8):
    """Weighted kernel prior used alongside the adversarial loss.

    Terms: ``(sum k - 1)^2``; mass times normalized distance from center;
    mean of ``|k|^power``; squared distance of the centroid from the center.
    Returns a scalar tensor (or float for numpy input) and the term dict.
    """
    w = {"sum_to_one": 0.5, "boundary": 0.5, "sparsity": 5.0, "centrality": 1.0}
    if weights:
        w.update(weights)
    as_numpy = not torch.is_tensor(k_raw)
    k = torch.as_tensor(np.asarray(k_raw, dtype=np.float64)) if as_numpy else k_raw
    n = k.shape[-1]
    mask = torch.as_tensor(_boundary_mask(n), dtype=k.dtype, device=k.device)
    total = k.sum()
    sum_term = (total - 1.0) ** 2
    boundary = (k.abs() * mask).sum()
    # +eps keeps the |k|^p gradient finite at zero entries
    sparsity = ((k.abs() + eps) ** power - eps**power).mean()
    idx = torch.arange(n, dtype=k.dtype, device=k.device) - (n - 1) / 2.0
    mass = k.abs().sum() + eps
    cy = (k.abs().sum(1) * idx).sum() / mass
    cx = (k.abs().sum(0) * idx).sum() / mass
    centrality = cx**2 + cy**2
    terms = {"sum_to_one": sum_term, "boundary": boundary, "sparsity": sparsity, "centrality": centrality}
    loss = sum(w[name] * t for name, t in terms.items())
    if as_numpy:
        return float(loss), {name: float(t) for name, t in terms.items()}
    return loss, terms


def _downscale(img, scale):
    t = torch.as_tensor(img, dtype=torch.float32)[None, None]
    h, w = img.shape
    size = (int(round(h / scale)), int(round(w / scale)))
    return F.interpolate(t, size=size, mode="bicubic", antialias=True, align_corners=False)[0, 0].double().numpy()


def _resample_kernel(k, scale, size):
    """Kernel shrunk by ``scale``: bilinear resampling on the centered grid."""
    from scipy.ndimage import map_coordinates

    c = (size - 1) / 2.0
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    src_y = (y - c) * scale + (k.shape[0] - 1) / 2.0
    src_x = (x - c) * scale + (k.shape[1] - 1) / 2.0
    out = map_coordinates(k, [src_y, src_x], order=1, mode="constant", cval=0.0)
    s = out.sum()
    if s <= 0:
        out = np.zeros((size, size))
        out[size // 2, size // 2] = 1.0
        return out
    return out / s


def unroll_cross_scale(residual, scale, depth=6):
    """Solve ``k = r * down_scale(k)`` by fixed-point iteration from ``k = r``."""
    from scipy.signal import convolve2d

    r = np.asarray(residual, dtype=np.float64)
    n = r.shape[0]
    k = r.copy()
    for _ in range(depth):
        k = convolve2d(r, _resample_kernel(k, scale, n), mode="same")
        k = np.clip(k, 0, None)
        k /= k.sum()
    return k


def _random_patches(img, size, count, gen):
    h, w = img.shape[-2:]
    ys = torch.randint(0, h - size + 1, (count,), generator=gen)
    xs = torch.randint(0, w - size + 1, (count,), generator=gen)
    return torch.stack([img[..., y : y + size, x : x + size] for y, x in zip(ys.tolist(), xs.tolist())])


def estimate_kernel(blurred, config=None, return_report=False):
    """Estimate the blur kernel of a single image.

    Runs ``config.iterations`` alternating discriminator/generator Adam steps
    and returns the extracted kernel (optionally with a small report dict).
    Fully deterministic for a fixed config and seed on a given machine.
    """
    cfg = config or EstimationConfig()
    img = luma(as_image(blurred))
    if min(img.shape) < cfg.patch_size:
        raise ValueError(f"image {img.shape} smaller than patch size {cfg.patch_size}")

    torch.manual_seed(cfg.seed)
    rng = torch.Generator().manual_seed(cfg.seed)
    gen = BlurGenerator(cfg.gen_layers, cfg.gen_channels)
    gen.reset_to_identity(noise=1e-2, generator=rng)
    rf = gen.receptive_field

    if float(np.var(img)) == 0.0:
        warnings.warn("constant image: no blur information, returning the prior optimum", RuntimeWarning)
        k = delta_kernel(cfg.kernel_size)
        return (k, {"degenerate": True}) if return_report else k

    disc = PatchDiscriminator(1, cfg.disc_channels, cfg.disc_layers)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr_gen, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr_disc, betas=(0.5, 0.999))

    real_src = torch.as_tensor(img, dtype=torch.float32)[None]
    small = _downscale(img, cfg.scale) if cfg.scale > 1 else img
    fake_src = torch.as_tensor(small, dtype=torch.float32)[None]
    in_size = cfg.patch_size + rf - 1
    if min(small.shape) < in_size:
        raise ValueError(
            f"downscaled image {small.shape} too small for generator input {in_size}; "
            "use a larger image or a smaller patch_size"
        )

    losses = {}
    for it in range(cfg.iterations):
        real = _random_patches(real_src, cfg.patch_size, cfg.batch, rng)
        g_in = _random_patches(fake_src, in_size, cfg.batch, rng)

        fake = gen(g_in)
        d_fake = disc(fake)
        loss_adv = F.mse_loss(d_fake, torch.ones_like(d_fake))
        k_full = gen.composed_kernel()
        loss_reg, _ = kernel_regularization(_center_crop(k_full, cfg.kernel_size), cfg.reg_weights, cfg.sparsity_power)
        loss_g = loss_adv + loss_reg
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()

        d_real = disc(real)
        d_fake = disc(fake.detach())
        loss_d = 0.5 * (F.mse_loss(d_real, torch.ones_like(d_real)) + F.mse_loss(d_fake, torch.zeros_like(d_fake)))
        opt_d.zero_grad()
        loss_d.backward()
        opt_d.step()

        if not (torch.isfinite(loss_g) and torch.isfinite(loss_d)):
            raise EstimationError(f"non-finite loss at iteration {it}")
        if it % 200 == 0:
            log.debug("iter %d: adv %.4f reg %.4f disc %.4f", it, loss_adv.item(), loss_reg.item(), loss_d.item())
        losses = {"gen_adv": loss_adv.item(), "gen_reg": loss_reg.item(), "disc": loss_d.item()}

    with torch.no_grad():
        raw = gen.composed_kernel().double().cpu().numpy()
    residual = crop_about_centroid(raw, cfg.kernel_size) if raw.shape[0] >= cfg.kernel_size else np.pad(
        raw, (cfg.kernel_size - raw.shape[0]) // 2
    )
    residual = BlurKernel.from_array(residual).values
    k = unroll_cross_scale(residual, cfg.scale) if cfg.scale > 1 else residual
    kernel = BlurKernel.from_array(k)
    if return_report:
        return kernel, {"degenerate": False, "final_losses": losses, "residual": residual}
    return kernel


def _center_crop(k, size):
    n = k.shape[-1]
    if n <= size:
        return k
    o = (n - size) // 2
    return k[o : o + size, o : o + size]


def estimate_dataset_kernels(manifest_path, config=None):
    """Estimate and store one KERN1 kernel per sample; skips finished samples.

    Each sample uses its own seed derived from ``config.seed`` and its index.
    Failures are recorded under ``estimation_failures`` and do not stop the run.
    """
    cfg = config or EstimationConfig()
    manifest_path = Path(manifest_path)
    manifest = degradation.read_manifest(manifest_path)
    root = manifest_path.parent
    (root / "kernels").mkdir(exist_ok=True)
    failures = dict(manifest.get("estimation_failures", {}))
    computed = 0
    for idx, rec in enumerate(manifest["samples"]):
        rel = f"kernels/{rec['id']}.kern"
        if rec.get("estimated_kernel") == rel and (root / rel).exists():
            continue
        blurred = read_image(root / rec["blurred_path"])
        sample_cfg = EstimationConfig(**{**asdict(cfg), "seed": degradation.per_sample_seed(cfg.seed, idx)})
        try:
            k = estimate_kernel(blurred, sample_cfg)
        except (EstimationError, ValueError) as exc:
            failures[rec["id"]] = str(exc)
            log.warning("kernel estimation failed for %s: %s", rec["id"], exc)
            continue
        save_kernel(root / rel, k)
        rec["estimated_kernel"] = rel
        failures.pop(rec["id"], None)
        computed += 1
        # persist after every sample so an interrupted run resumes here
        manifest["estimation_failures"] = failures
        degradation.write_manifest(manifest_path, manifest)
    manifest["estimation_failures"] = failures
    degradation.write_manifest(manifest_path, manifest)
    log.info("estimated %d kernels (%d failures)", computed, len(failures))
    return manifest
