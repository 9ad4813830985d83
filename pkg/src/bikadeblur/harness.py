"""Dataset -> kernel estimation -> training -> evaluation orchestration."""

from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from . import degradation as deg
from .estimator import estimate_dataset_kernels  # noqa: F401  re-exported
from .imageio import kernel_to_image, read_image, write_image
from .kernels import load_kernel, make_kernel, save_kernel
from .metrics import evaluate, psnr, write_report
from .motion import random_flow, synthesize_motion_blur
from .network import (
    BIKAnet,
    NetConfig,
    flow_to_tensor,
    image_to_tensor,
    kernel_to_tensor,
    load_checkpoint,
    reconstruction_loss,
    restore,
    save_checkpoint,
)

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "kernel_adain"
    blocks: int = 8
    width: int = 64
    iterations: int = 200_000
    batch: int = 16
    lr: float = 2e-4
    loss: str = "mae"
    ablate: list = field(default_factory=list)
    kernel_source: str = "ground_truth"
    seed: int = 0
    dataset: str | None = None
    checkpoint_dir: str | None = None
    patch: int | None = 128
    mapping_width: int = 256
    log_every: int = 50
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.mode not in ("kernel_adain", "motion_concat"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.loss not in ("mae", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.kernel_source not in ("ground_truth", "estimated"):
            raise ValueError(f"unknown kernel source {self.kernel_source!r}")
        bad = set(self.ablate) - {"no_kernel_ae", "no_lts"}
        if bad:
            raise ValueError(f"unknown ablation flags {sorted(bad)}")
        if self.mode == "motion_concat" and "no_kernel_ae" in self.ablate:
            raise ValueError("no_kernel_ae cannot be combined with motion_concat mode")
        self.ablate = sorted(set(self.ablate))

    def net_config(self):
        return NetConfig(
            n_blocks=self.blocks,
            width=self.width,
            mode="kernel" if self.mode == "kernel_adain" else "motion",
            mapping_width=self.mapping_width,
            ablate=list(self.ablate),
        )

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig fields {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def preset(cls, name):
        text = resources.files("bikadeblur.configs").joinpath(f"{name}.json").read_text()
        return cls.from_dict(json.loads(text))


# -- dataset generation ----------------------------------------------------


def generate_motion_dataset(sharp_dir, crop, count, seed, out_dir, max_flow=9.0, steps=17, split="train"):
    """Motion-flow counterpart of :func:`degradation.generate_dataset`.

    Writes one ``flows/<id>.npy`` (H x W x 2, float32) per sample next to the
    images; the manifest records ``flow_path`` instead of a kernel index.
    """
    sources = deg.list_images(sharp_dir)
    if not sources:
        raise ValueError(f"no decodable images in {sharp_dir}")
    images = [read_image(p) for p in sources]
    if crop > min(min(im.shape[:2]) for im in images):
        raise ValueError("crop exceeds smallest source dimension")
    out = Path(out_dir)
    for sub in ("sharp", "blurred", "flows"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for idx in range(count):
        s_seed = deg.per_sample_seed(seed, idx)
        rng = np.random.default_rng(s_seed)
        src = int(rng.integers(len(images)))
        im = images[src]
        y0 = int(rng.integers(im.shape[0] - crop + 1))
        x0 = int(rng.integers(im.shape[1] - crop + 1))
        sharp = im[y0 : y0 + crop, x0 : x0 + crop]
        flow = random_flow(crop, crop, max_flow, seed=int(rng.integers(2**31))).astype(np.float32)
        blurred = synthesize_motion_blur(sharp, flow, steps)
        sid = f"{idx:05d}"
        write_image(out / "sharp" / f"{sid}.png", sharp)
        write_image(out / "blurred" / f"{sid}.png", blurred)
        np.save(out / "flows" / f"{sid}.npy", flow)
        records.append(
            {
                "id": sid,
                "sharp_path": f"sharp/{sid}.png",
                "blurred_path": f"blurred/{sid}.png",
                "flow_path": f"flows/{sid}.npy",
                "per_sample_seed": s_seed,
                "source": Path(sources[src]).name,
            }
        )
    manifest = {
        "version": deg.MANIFEST_VERSION,
        "kind": "motion",
        "split": split,
        "seed": int(seed),
        "crop": int(crop),
        "noise_sigma": 0.0,
        "bank": [],
        "samples": records,
    }
    deg.write_manifest(out / "manifest.json", manifest)
    return manifest


# -- training ----------------------------------------------------------------


def _sample_condition(manifest, rec, kernel_source):
    root = deg.manifest_root(manifest)
    if "flow_path" in rec:
        return None, np.load(root / rec["flow_path"])
    if kernel_source == "estimated":
        if not rec.get("estimated_kernel"):
            raise ValueError(
                f"sample {rec['id']} has no estimated kernel; run `bikadeblur estimate-kernels` on the manifest first"
            )
        return load_kernel(root / rec["estimated_kernel"]).values, None
    bank = deg.manifest_bank(manifest)
    return make_kernel(bank[rec["kernel_index"]]).values, None


def load_training_set(manifest, kernel_source="ground_truth", motion=False):
    samples = []
    for rec in manifest["samples"]:
        if motion != ("flow_path" in rec):
            raise ValueError(
                "manifest contents do not match the model mode "
                f"({'motion' if motion else 'kernel'} model, sample {rec['id']})"
            )
        sharp, blurred = deg.load_sample(manifest, rec)
        kernel, flow = _sample_condition(manifest, rec, kernel_source)
        samples.append({"id": rec["id"], "sharp": sharp, "blurred": blurred, "kernel": kernel, "flow": flow})
    return samples


def _batch(samples, idxs, patch, rng):
    bs, ss, ks, fs = [], [], [], []
    for i in idxs:
        s = samples[i]
        h, w = s["sharp"].shape[:2]
        if patch and patch < min(h, w):
            y = int(rng.integers(h - patch + 1))
            x = int(rng.integers(w - patch + 1))
            win = (slice(y, y + patch), slice(x, x + patch))
        else:
            win = (slice(None), slice(None))
        bs.append(image_to_tensor(s["blurred"][win]))
        ss.append(image_to_tensor(s["sharp"][win]))
        if s["kernel"] is not None:
            ks.append(kernel_to_tensor(s["kernel"]))
        if s["flow"] is not None:
            fs.append(flow_to_tensor(s["flow"][win]))
    return (
        torch.cat(bs),
        torch.cat(ss),
        torch.cat(ks) if ks else None,
        torch.cat(fs) if fs else None,
    )


@contextlib.contextmanager
def directory_lock(directory):
    path = Path(directory) / ".lock"
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"{directory} is locked by another training run (remove {path} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def cosine_lr(base, it, total):
    return 0.5 * base * (1.0 + math.cos(math.pi * it / total))


def train(config):
    """Train a model per ``config``; returns the path of the final checkpoint.

    Batches are drawn from shuffled epochs of the manifest in a seed-determined
    order. The loss log records the mean loss over each ``log_every`` window.
    """
    cfg = config
    if not cfg.dataset or not cfg.checkpoint_dir:
        raise ValueError("train needs both dataset and checkpoint_dir")
    manifest = deg.read_manifest(cfg.dataset)
    motion = cfg.mode == "motion_concat"
    samples = load_training_set(manifest, cfg.kernel_source, motion)
    ckdir = Path(cfg.checkpoint_dir)
    ckdir.mkdir(parents=True, exist_ok=True)

    with directory_lock(ckdir):
        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        model = BIKAnet(cfg.net_config())
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        (ckdir / "config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
        log_path = ckdir / "loss_log.csv"
        log_buf = io.StringIO()
        writer = csv.writer(log_buf, lineterminator="\n")
        writer.writerow(["iteration", "loss", "lr"])

        order = []
        window = []
        last_good = None
        bsize = min(cfg.batch, len(samples))
        model.train()
        for it in range(1, cfg.iterations + 1):
            lr = cosine_lr(cfg.lr, it - 1, cfg.iterations)
            for g in opt.param_groups:
                g["lr"] = lr
            if len(order) < bsize:
                order.extend(rng.permutation(len(samples)).tolist())
            idxs, order = order[:bsize], order[bsize:]
            b, s, k, fl = _batch(samples, idxs, cfg.patch, rng)
            out = model(b, k, fl)
            loss = reconstruction_loss(out, s, cfg.loss)
            if not torch.isfinite(loss):
                log_path.write_text(log_buf.getvalue())
                raise NumericalError(
                    f"non-finite loss at iteration {it}; last good checkpoint: {last_good or 'none'}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            window.append(loss.item())
            if it % cfg.log_every == 0 or it == cfg.iterations:
                writer.writerow([it, f"{np.mean(window):.8f}", f"{lr:.8e}"])
                window = []
                log_path.write_text(log_buf.getvalue())
            if it % cfg.checkpoint_every == 0 and it < cfg.iterations:
                last_good = ckdir / f"ckpt_{it:07d}.pt"
                save_checkpoint(last_good, model, opt, it, {"train": asdict(cfg)})
        final = ckdir / "final.pt"
        save_checkpoint(final, model, opt, cfg.iterations, {"train": asdict(cfg)})
        log_path.write_text(log_buf.getvalue())
    return final


def read_loss_log(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [(int(r["iteration"]), float(r["loss"]), float(r["lr"])) for r in rows]


# -- evaluation ----------------------------------------------------------------


def _grid(*images):
    h = max(im.shape[0] for im in images)
    ims = [np.repeat(im, 3, axis=2) if im.shape[2] == 1 else im for im in images]
    ims = [np.pad(im, ((0, h - im.shape[0]), (0, 0), (0, 0))) for im in ims]
    sep = np.ones((h, 4, 3))
    parts = []
    for im in ims:
        parts += [im, sep]
    return np.concatenate(parts[:-1], axis=1)


def evaluate_checkpoint(checkpoint, manifest_path, out_dir, kernel_source="estimated", visuals=True):
    """Restore every manifest sample and write PNGs plus ``report.json``.

    Returns the report path.
    """
    model, _ = load_checkpoint(checkpoint)
    manifest = deg.read_manifest(manifest_path)
    motion = model.config.mode == "motion"
    out = Path(out_dir)
    restored_dir = out / "restored"
    restored_dir.mkdir(parents=True, exist_ok=True)
    if visuals:
        (out / "grids").mkdir(exist_ok=True)
        if not motion:
            (out / "kernels").mkdir(exist_ok=True)
    root = deg.manifest_root(manifest)
    for rec in manifest["samples"]:
        if motion != ("flow_path" in rec):
            raise ValueError("checkpoint mode does not match manifest contents")
        sharp, blurred = deg.load_sample(manifest, rec)
        if motion or model.mapping is not None:
            kernel, flow = _sample_condition(manifest, rec, kernel_source)
        else:
            kernel, flow = None, None
        restored = restore(model, blurred, kernel, flow)
        write_image(restored_dir / f"{rec['id']}.png", restored)
        if visuals:
            write_image(out / "grids" / f"{rec['id']}.png", _grid(blurred, restored, sharp))
            if not motion and manifest.get("bank"):
                gt = make_kernel(deg.manifest_bank(manifest)[rec["kernel_index"]]).values
                write_image(out / "kernels" / f"{rec['id']}_gt.png", kernel_to_image(gt))
                if rec.get("estimated_kernel"):
                    est = load_kernel(root / rec["estimated_kernel"]).values
                    write_image(out / "kernels" / f"{rec['id']}_est.png", kernel_to_image(est))
    report = evaluate(
        manifest,
        restored_dir,
        dataset=str(Path(manifest_path).name),
        checkpoint=str(Path(checkpoint).name),
    )
    report["kernel_source"] = kernel_source
    path = out / "report.json"
    write_report(path, report)
    return path


def blurred_baseline(manifest):
    """Mean PSNR of the blurred inputs against their sharp targets."""
    vals = [psnr(*deg.load_sample(manifest, rec)) for rec in manifest["samples"]]
    return float(np.mean(vals))


def wiener_file(image_path, kernel_path, nsr, out_path):
    img = read_image(image_path)
    k = load_kernel(kernel_path)
    write_image(out_path, deg.wiener_deconvolve(img, k, nsr))
    return Path(out_path)


__all__ = [
    "TrainConfig",
    "NumericalError",
    "generate_motion_dataset",
    "estimate_dataset_kernels",
    "train",
    "read_loss_log",
    "evaluate_checkpoint",
    "blurred_baseline",
    "wiener_file",
]
