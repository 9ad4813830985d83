"""Command-line entry point: ``bikadeblur <subcommand> ...``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import degradation as deg
from .estimator import EstimationConfig, EstimationError, estimate_dataset_kernels, estimate_kernel
from .harness import (
    NumericalError,
    TrainConfig,
    evaluate_checkpoint,
    generate_motion_dataset,
    train,
    wiener_file,
)
from .imageio import read_image
from .kernels import default_bank_specs, kernel_distance, load_bank, load_kernel, save_kernel
from .metrics import format_report, read_report

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _estimation_config(args):
    return EstimationConfig(
        iterations=args.iters,
        patch_size=args.patch,
        seed=args.seed,
        lr_gen=args.lr,
        lr_disc=args.lr,
    )


def cmd_generate(args):
    if args.kind == "motion":
        manifest = generate_motion_dataset(args.sharp_dir, args.crop, args.count, args.seed, args.out, split=args.split)
    else:
        bank = load_bank(args.bank) if args.bank else default_bank_specs()
        manifest = deg.generate_dataset(
            args.sharp_dir, bank, args.crop, args.count, args.noise_sigma, args.seed, args.out, split=args.split
        )
    path = Path(args.out) / "manifest.json"
    print(f"{path}: {len(manifest['samples'])} samples, bank of {len(manifest['bank'])} kernels, seed {args.seed}")
    return path


def cmd_estimate_kernel(args):
    img = read_image(args.image)
    kernel, info = estimate_kernel(img, _estimation_config(args), return_report=True)
    save_kernel(args.out_kernel, kernel)
    if args.report:
        report = {
            "image": str(args.image),
            "iterations": args.iters,
            "seed": args.seed,
            "final_losses": info.get("final_losses"),
            "degenerate": info.get("degenerate", False),
            "kernel_sum": float(kernel.values.sum()),
            "kernel_max": float(kernel.values.max()),
        }
        if args.reference:
            d = kernel_distance(kernel, load_kernel(args.reference))
            report["distance_to_reference"] = {"plain": d.plain, "shift_tolerant": d.shift_tolerant}
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out_kernel}")
    return Path(args.out_kernel)


def cmd_estimate_kernels(args):
    manifest = estimate_dataset_kernels(args.manifest, _estimation_config(args))
    done = sum(1 for r in manifest["samples"] if r.get("estimated_kernel"))
    print(f"{done}/{len(manifest['samples'])} samples have estimated kernels")
    return Path(args.manifest)


def _train_config(args):
    if args.config in ("paper", "desk"):
        cfg = asdict(TrainConfig.preset(args.config))
    elif args.config:
        cfg = asdict(TrainConfig.from_file(args.config))
    else:
        cfg = asdict(TrainConfig.preset("desk"))
    overrides = {
        "mode": args.mode,
        "blocks": args.blocks,
        "width": args.width,
        "iterations": args.iters,
        "batch": args.batch,
        "lr": args.lr,
        "loss": args.loss,
        "kernel_source": args.kernel_source,
        "seed": args.seed,
        "patch": args.patch,
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if args.ablate:
        cfg["ablate"] = sorted(set(cfg["ablate"]) | set(args.ablate))
    if "BIKA_SEED" in os.environ:
        cfg["seed"] = int(os.environ["BIKA_SEED"])
    cfg["dataset"] = args.dataset
    cfg["checkpoint_dir"] = args.checkpoint_dir
    return TrainConfig(**cfg)


def cmd_train(args):
    path = train(_train_config(args))
    print(f"final checkpoint: {path}")
    return path


def cmd_eval(args):
    path = evaluate_checkpoint(args.checkpoint, args.manifest, args.out, args.kernel_source, visuals=not args.no_visuals)
    print(format_report(read_report(path)))
    return path


def cmd_wiener(args):
    path = wiener_file(args.image, args.kernel, args.nsr, args.out)
    print(f"wrote {path}")
    return path


def cmd_report(args):
    print(format_report(read_report(args.report)))


def build_parser():
    p = argparse.ArgumentParser(prog="bikadeblur", description="Blind kernel-adaptive deblurring toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a blurred/sharp dataset")
    g.add_argument("--sharp-dir", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--crop", type=int, default=256)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-sigma", type=float, default=0.0)
    g.add_argument("--bank", help="JSON array of kernel specs (default: built-in 16-kernel bank)")
    g.add_argument("--kind", choices=["gaussian", "motion"], default="gaussian")
    g.add_argument("--split", choices=["train", "test"], default="train")
    g.set_defaults(func=cmd_generate)

    def estimation_flags(sp):
        sp.add_argument("--iters", type=int, default=3000)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--patch", type=int, default=32)
        sp.add_argument("--lr", type=float, default=2e-4)

    e = sub.add_parser("estimate-kernel", help="estimate the blur kernel of one image")
    e.add_argument("--image", required=True)
    e.add_argument("--out-kernel", required=True)
    e.add_argument("--report")
    e.add_argument("--reference", help="ground-truth KERN1 file for the report")
    estimation_flags(e)
    e.set_defaults(func=cmd_estimate_kernel)

    es = sub.add_parser("estimate-kernels", help="estimate kernels for every sample of a manifest")
    es.add_argument("--manifest", required=True)
    estimation_flags(es)
    es.set_defaults(func=cmd_estimate_kernels)

    t = sub.add_parser("train", help="train the restoration network")
    t.add_argument("--dataset", required=True, help="manifest.json")
    t.add_argument("--checkpoint-dir", required=True)
    t.add_argument("--config", help="'desk', 'paper' or a JSON file")
    t.add_argument("--mode", choices=["kernel_adain", "motion_concat"])
    t.add_argument("--blocks", type=int)
    t.add_argument("--width", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--patch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--loss", choices=["mae", "mse"])
    t.add_argument("--kernel-source", choices=["ground_truth", "estimated"])
    t.add_argument("--ablate", action="append", choices=["no_kernel_ae", "no_lts"])
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="restore a dataset and score it")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--kernel-source", choices=["ground_truth", "estimated"], default="estimated")
    ev.add_argument("--no-visuals", action="store_true")
    ev.set_defaults(func=cmd_eval)

    w = sub.add_parser("wiener", help="Wiener deconvolution with a known kernel")
    w.add_argument("--image", required=True)
    w.add_argument("--kernel", required=True)
    w.add_argument("--nsr", type=float, default=0.0)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_wiener)

    r = sub.add_parser("report", help="pretty-print a metric report")
    r.add_argument("report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (NumericalError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
