"""Kernel-conditioned restoration network.

The trunk runs at full input resolution: a stem lifts the image to ``width``
channels, ``n_blocks`` residual kernel-adaptive autoencoder blocks refine the
features, and a head projects back to RGB. The head's last layer starts at
zero and the output is ``B + head(...)``, so a fresh model is the identity.

Inside each block the features are encoded twice with stride 2 down to a
``4 * width`` bottleneck, passed through two conditioned convolutions and
decoded back. Conditioning is either AdaIN whose per-channel scale and bias
come from a mapping network over the flattened kernel (``mode="kernel"``), or
concatenation of the per-pixel motion flow (``mode="motion"``). The stem
output is pooled to bottleneck resolution, projected by a 1x1 convolution and
added between the two bottleneck convolutions of every block (the long-term
skip).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .kernels import DEFAULT_KERNEL_SIZE

ADAIN_EPS = 1e-5
CHECKPOINT_VERSION = 1


@dataclass
class NetConfig:
    n_blocks: int = 8
    width: int = 64
    mode: str = "kernel"
    kernel_size: int = DEFAULT_KERNEL_SIZE
    mapping_layers: int = 4
    mapping_width: int = 256
    ablate: list = field(default_factory=list)
    channels: int = 3

    def __post_init__(self):
        if self.mode not in ("kernel", "motion"):
            raise ValueError(f"unknown mode {self.mode!r}")
        unknown = set(self.ablate) - {"no_kernel_ae", "no_lts"}
        if unknown:
            raise ValueError(f"unknown ablation flags {sorted(unknown)}")
        if self.mode == "motion" and "no_kernel_ae" in self.ablate:
            raise ValueError("no_kernel_ae is not available in motion mode")
        self.ablate = sorted(set(self.ablate))

    @property
    def bottleneck(self):
        return 4 * self.width

    @property
    def use_kernel(self):
        return self.mode == "kernel" and "no_kernel_ae" not in self.ablate

    @property
    def use_lts(self):
        return "no_lts" not in self.ablate

    def to_dict(self):
        return asdict(self)


def adain(x, scale, bias, eps=ADAIN_EPS):
    """``scale * (x - mean) / sqrt(var + eps) + bias`` per sample and channel.

    ``scale`` and ``bias`` have shape ``(N, C)`` or ``(C,)``. Statistics are
    the biased mean and variance over the spatial dimensions.
    """
    if x.dim() != 4:
        raise ValueError("adain expects N x C x H x W features")
    n, c = x.shape[:2]
    scale = torch.as_tensor(scale, dtype=x.dtype, device=x.device)
    bias = torch.as_tensor(bias, dtype=x.dtype, device=x.device)
    if scale.shape[-1] != c or bias.shape[-1] != c:
        raise ValueError(f"AdaIN params have {scale.shape[-1]} channels, features have {c}")
    scale = scale.reshape(-1, c, 1, 1)
    bias = bias.reshape(-1, c, 1, 1)
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    return scale * (x - mean) / torch.sqrt(var + eps) + bias


class MappingNetwork(nn.Module):
    """Flattened kernel -> concatenated (scale, bias) for every conditioned layer.

    Scales are emitted as ``1 + raw`` so a zero last layer gives identity AdaIN.
    """

    def __init__(self, kernel_size, n_layers, width, out_dim):
        super().__init__()
        self.kernel_size = kernel_size
        dims = [kernel_size * kernel_size] + [width] * (n_layers - 1) + [out_dim]
        layers = []
        for i in range(n_layers):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < n_layers - 1:
                layers.append(nn.LeakyReLU(0.2))
        self.net = nn.Sequential(*layers)
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, kernel):
        if kernel.shape[-2:] != (self.kernel_size, self.kernel_size):
            raise ValueError(
                f"kernel is {tuple(kernel.shape[-2:])}, network expects {self.kernel_size}x{self.kernel_size}"
            )
        flat = kernel.reshape(kernel.shape[0], -1) * kernel[0].numel()
        return self.net(flat)


def split_adain(raw, n_blocks, layers_per_block, channels):
    """Slice mapping output into ``[[(scale, bias), ...] per block]``."""
    n = raw.shape[0]
    raw = raw.reshape(n, n_blocks, layers_per_block, 2, channels)
    return [
        [(1.0 + raw[:, b, l, 0], raw[:, b, l, 1]) for l in range(layers_per_block)] for b in range(n_blocks)
    ]


class KernelAEBlock(nn.Module):
    def __init__(self, width, cond="adain", lts=True):
        super().__init__()
        wide = 4 * width
        self.cond = cond
        self.enc1 = nn.Conv2d(width, 2 * width, 3, stride=2, padding=1)
        self.enc2 = nn.Conv2d(2 * width, wide, 3, stride=2, padding=1)
        if cond == "flow":
            self.flow_fuse = nn.Conv2d(wide + 2, wide, 1)
        self.mid1 = nn.Conv2d(wide, wide, 3, padding=1)
        self.mid2 = nn.Conv2d(wide, wide, 3, padding=1)
        self.skip_proj = nn.Conv2d(width, wide, 1) if lts else None
        self.dec1 = nn.ConvTranspose2d(wide, 2 * width, 4, stride=2, padding=1)
        self.dec2 = nn.ConvTranspose2d(2 * width, width, 4, stride=2, padding=1)

    def _norm(self, h, params):
        if self.cond == "flow":
            return h
        if params is None:
            return adain(h, torch.ones(h.shape[1], dtype=h.dtype), torch.zeros(h.shape[1], dtype=h.dtype))
        return adain(h, *params)

    def forward(self, x, adain_params=None, coarse=None, flow=None):
        if x.shape[-2] % 4 or x.shape[-1] % 4:
            raise ValueError(f"block input {tuple(x.shape[-2:])} not divisible by 4")
        act = F.leaky_relu
        h = act(self.enc1(x), 0.2)
        h = act(self.enc2(h), 0.2)
        if self.cond == "flow":
            if flow is None:
                raise ValueError("motion block needs a flow field")
            h = self.flow_fuse(torch.cat([h, flow], dim=1))
        p1, p2 = (adain_params if adain_params is not None else (None, None))
        h = act(self._norm(self.mid1(h), p1), 0.2)
        if self.skip_proj is not None and coarse is not None:
            h = h + self.skip_proj(F.avg_pool2d(coarse, 4))
        h = act(self._norm(self.mid2(h), p2), 0.2)
        h = act(self.dec1(h), 0.2)
        return x + self.dec2(h)


class BIKAnet(nn.Module):
    def __init__(self, config=None, **kwargs):
        super().__init__()
        cfg = config or NetConfig(**kwargs)
        self.config = cfg
        f, c = cfg.width, cfg.channels
        self.stem = nn.Sequential(nn.Conv2d(c, f, 3, padding=1), nn.LeakyReLU(0.2), nn.Conv2d(f, f, 3, padding=1))
        cond = "flow" if cfg.mode == "motion" else "adain"
        self.blocks = nn.ModuleList([KernelAEBlock(f, cond, cfg.use_lts) for _ in range(cfg.n_blocks)])
        self.mapping = None
        if cfg.use_kernel:
            out = cfg.n_blocks * 2 * 2 * cfg.bottleneck
            self.mapping = MappingNetwork(cfg.kernel_size, cfg.mapping_layers, cfg.mapping_width, out)
        self.head = nn.Sequential(nn.Conv2d(f, f, 3, padding=1), nn.LeakyReLU(0.2), nn.Conv2d(f, c, 3, padding=1))
        nn.init.zeros_(self.head[-1].weight)
        nn.init.zeros_(self.head[-1].bias)

    def adain_params(self, kernel):
        if self.mapping is None:
            return [None] * self.config.n_blocks
        raw = self.mapping(kernel)
        return split_adain(raw, self.config.n_blocks, 2, self.config.bottleneck)

    def forward(self, blurred, kernel=None, flow=None):
        """``blurred``: N x C x H x W; ``kernel``: N x k x k; ``flow``: N x 2 x H x W."""
        n, c, h, w = blurred.shape
        if c != self.config.channels:
            raise ValueError(f"expected {self.config.channels} channels, got {c}")
        ph, pw = (-h) % 4, (-w) % 4
        x = F.pad(blurred, (0, pw, 0, ph), mode="replicate") if ph or pw else blurred
        if self.config.mode == "motion":
            if flow is None or flow.shape[-2:] != (h, w) or flow.shape[1] != 2:
                raise ValueError("motion mode needs an N x 2 x H x W flow matching the image")
            fl = F.pad(flow, (0, pw, 0, ph), mode="replicate") if ph or pw else flow
            # displacements are measured in pixels, so shrink with the grid
            small_flow = F.avg_pool2d(fl, 4) / 4.0
            params = [None] * self.config.n_blocks
        else:
            if kernel is None:
                if self.mapping is not None:
                    raise ValueError("kernel mode needs a kernel")
                kernel = torch.zeros(n, self.config.kernel_size, self.config.kernel_size, dtype=x.dtype)
            elif kernel.shape[-2:] != (self.config.kernel_size, self.config.kernel_size):
                raise ValueError(f"kernel must be {self.config.kernel_size}x{self.config.kernel_size}")
            small_flow = None
            params = self.adain_params(kernel.to(x.dtype))
        coarse = self.stem(x)
        feat = coarse
        for block, p in zip(self.blocks, params):
            feat = block(feat, p, coarse if self.config.use_lts else None, small_flow)
        out = x + self.head(feat)
        return out[:, :, :h, :w]


def parameter_count(module):
    return sum(p.numel() for p in module.parameters()) if module is not None else 0


def mapping_parameter_count(config):
    """Closed-form size of the mapping network for ``config``."""
    dims = (
        [config.kernel_size**2]
        + [config.mapping_width] * (config.mapping_layers - 1)
        + [config.n_blocks * 4 * config.bottleneck]
    )
    return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


def skip_parameter_count(config):
    return config.n_blocks * (config.width * config.bottleneck + config.bottleneck)


def reconstruction_loss(restored, sharp, kind="mae"):
    if restored.shape != sharp.shape:
        raise ValueError(f"shape mismatch: {tuple(restored.shape)} vs {tuple(sharp.shape)}")
    if kind == "mae":
        return (restored - sharp).abs().mean()
    if kind == "mse":
        return ((restored - sharp) ** 2).mean()
    raise ValueError(f"unknown loss {kind!r}")


@torch.no_grad()
def randomize_(model, seed=0, std=0.05):
    """Overwrite every parameter with seeded noise (for liveness checks)."""
    g = torch.Generator().manual_seed(seed)
    for p in model.parameters():
        p.copy_(std * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return model


def image_to_tensor(img, dtype=torch.float32):
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return torch.as_tensor(a.transpose(2, 0, 1).copy(), dtype=dtype)[None]


def tensor_to_image(t):
    return t[0].detach().cpu().double().numpy().transpose(1, 2, 0)


def kernel_to_tensor(kernel, dtype=torch.float32):
    v = kernel.values if hasattr(kernel, "values") else np.asarray(kernel)
    return torch.as_tensor(np.asarray(v, dtype=np.float64), dtype=dtype)[None]


def flow_to_tensor(flow, dtype=torch.float32):
    return torch.as_tensor(np.asarray(flow, dtype=np.float64).transpose(2, 0, 1).copy(), dtype=dtype)[None]


@torch.no_grad()
def restore(model, blurred, kernel=None, flow=None, clamp=True):
    """Run the model on one ``H x W x C`` image and return an ``H x W x C`` array."""
    model.eval()
    dtype = next(model.parameters()).dtype
    b = image_to_tensor(blurred, dtype)
    k = kernel_to_tensor(kernel, dtype) if kernel is not None else None
    fl = flow_to_tensor(flow, dtype) if flow is not None else None
    out = tensor_to_image(model(b, k, fl))
    return np.clip(out, 0.0, 1.0) if clamp else out


def save_checkpoint(path, model, optimizer=None, iteration=0, extra=None):
    state = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "params": {k: v.detach().cpu().float() for k, v in model.state_dict().items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "iteration": int(iteration),
        "extra": extra or {},
    }
    torch.save(state, path)


def load_checkpoint(path, optimizer=None):
    state = torch.load(path, map_location="cpu", weights_only=False)
    if state.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {state.get('version')!r}")
    model = BIKAnet(NetConfig(**state["config"]))
    model.load_state_dict(state["params"])
    if optimizer is not None and state["optimizer"] is not None:
        optimizer.load_state_dict(state["optimizer"])
    return model, state
