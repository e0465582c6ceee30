"""Command-line entry points: train, eval, enhance, decompose, synth.

Exit codes: 0 on success, 2 for configuration/data errors, 3 when training
aborts on a non-finite loss.  Set LAPLOSS_NUM_WORKERS to enable threaded
image loading (batch order is unaffected).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import pyramid
from .config import ConfigError, build_train_config, load_config
from .data import (
    DatasetError,
    generate_synthetic_dataset,
    save_image,
    scan_dataset,
    select_pairs,
)
from .metrics import EvalConfig, evaluate_dataset, format_table
from .models import CheckpointMismatch, load_checkpoint
from .trainer import TrainingAborted, fit

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3

TEST_SPLITS = ("test_under", "test_over", "grad", "mix")


def _load_image01(path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"cannot decode image '{path}': {exc}") from exc


def cmd_train(args) -> int:
    resolved = load_config(args.config)
    if args.seed is not None:
        resolved["train"]["seed"] = args.seed
    cfg = build_train_config(resolved)
    data_cfg = resolved["data"]
    if not data_cfg["root"]:
        raise ConfigError("data.root must be set for training")
    h, w = data_cfg["height"], data_cfg["width"]
    pyramid.validate_decomposable(h, w, cfg.generator_spec.level_count)
    manifests = scan_dataset(data_cfg["root"], split=data_cfg["train_split"])
    train_pairs = select_pairs(manifests, data_cfg["train_split"], h, w)
    eval_pairs = None
    if cfg.eval_interval > 0:
        eval_root = data_cfg["eval_root"] or data_cfg["root"]
        eval_manifests = scan_dataset(eval_root, split=data_cfg["eval_split"])
        eval_pairs = select_pairs(eval_manifests, data_cfg["eval_split"], h, w)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(resolved, indent=2))
    state, history = fit(
        cfg, train_pairs, eval_data=eval_pairs, out_dir=out_dir, resume_from=args.resume
    )
    print(f"trained to step {state.step}; outputs in {out_dir}")
    if history:
        last = history[-1]
        psnr_txt = "inf" if last["mean_psnr"] is None else f"{last['mean_psnr']:.2f}"
        print(f"final eval: PSNR {psnr_txt} dB, SSIM {last['mean_ssim']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    generator, sidecar = load_checkpoint(args.checkpoint)
    level_count = generator.spec.level_count
    h, w = args.height, args.width
    pyramid.validate_decomposable(h, w, level_count)
    splits = list(TEST_SPLITS) if args.split == "all" else [args.split]
    reports = []
    for split in splits:
        manifests = scan_dataset(args.data, split=split)
        pairs = select_pairs(manifests, split, h, w)
        if len(pairs) == 0:
            raise DatasetError(f"no samples in split '{split}' under '{args.data}'")
        reports.append(
            evaluate_dataset(generator, pairs, EvalConfig(level_count, dataset_name=split))
        )
    print(format_table(reports))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps({"checkpoint": str(args.checkpoint), "reports": [r.to_dict() for r in reports]}, indent=2)
        )
        for r in reports:
            r.write_csv(out_dir / f"report_{r.dataset_name}.csv")
    return EXIT_OK


def _pad_to_pyramid(img: np.ndarray, level_count: int):
    h, w = img.shape[:2]
    if min(h, w) < 2 ** level_count:
        raise DatasetError(
            f"image {h}x{w} too small to enhance with {level_count} levels "
            f"(need >= {2 ** level_count} per side)"
        )
    div = 2 ** (level_count - 1)
    ph = (div - h % div) % div
    pw = (div - w % div) % div
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="symmetric")
    return img, (h, w)


def cmd_enhance(args) -> int:
    from .metrics import enhance_image

    generator, _ = load_checkpoint(args.checkpoint)
    level_count = generator.spec.level_count
    img = _load_image01(args.input)
    padded, (h, w) = _pad_to_pyramid(img, level_count)
    out = enhance_image(generator, padded, level_count)[:h, :w]
    save_image(args.output, out)
    print(f"wrote {args.output} ({w}x{h})")
    return EXIT_OK


def cmd_decompose(args) -> int:
    img = _load_image01(args.input)
    h, w = img.shape[:2]
    pyramid.validate_decomposable(h, w, args.levels)
    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None]
    levels = pyramid.decompose(t, args.levels)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for k, level in enumerate(levels):
        arr = level[0].numpy().transpose(1, 2, 0)
        arrays[f"level_{k}"] = arr.astype(np.float32)
        visual = arr if k == 0 else arr + 0.5  # bands are signed; offset for viewing
        save_image(out_dir / f"level_{k}.png", np.clip(visual, 0.0, 1.0))
    np.savez(out_dir / "pyramid.npz", **arrays)
    manifest = {
        "input": str(args.input),
        "level_count": args.levels,
        "shapes": [list(a.shape) for a in arrays.values()],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {args.levels} levels to {out_dir}")
    if args.reconstruct:
        loaded = np.load(out_dir / "pyramid.npz")
        pyr = [
            torch.from_numpy(loaded[f"level_{k}"].transpose(2, 0, 1))[None]
            for k in range(args.levels)
        ]
        recon = pyramid.reconstruct(pyr)[0].numpy().transpose(1, 2, 0)
        err = float(np.abs(recon - img).max())
        print(f"max reconstruction error: {err:.3e}")
    return EXIT_OK


def cmd_synth(args) -> int:
    scenes = generate_synthetic_dataset(
        args.out,
        count=args.count,
        mode=args.mode,
        seed=args.seed,
        height=args.height,
        width=args.width,
    )
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="laploss",
        description="Multi-scale adversarial contrast enhancement on Laplacian pyramids.",
        epilog="Set LAPLOSS_NUM_WORKERS=<n> to load images on a thread pool.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True, help="path to the run config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--split", default="test_under", help="split name or 'all'")
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--out", default=None, help="directory for JSON/CSV reports")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("enhance", help="enhance a single image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("decompose", help="write per-level pyramid images")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--reconstruct", action="store_true", help="verify the round trip")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--mode", choices=("ladder", "grad", "mix", "all"), default="ladder")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ConfigError, DatasetError, CheckpointMismatch, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
