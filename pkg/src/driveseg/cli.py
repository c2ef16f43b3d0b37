"""Command-line surface: train, evaluate, infer, profile, ablate, convert.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. Every
command writes a resolved-config snapshot into its output directory so a
run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .core import ConfigError, DataError, DrivesegError, LayoutError, NumericsError
from .data import DataConfig, build_dataset, read_image, resize_pair
from .experiment import (ExperimentConfig, load_experiment_config,
                         write_resolved_config)
from .model import build_model
from .profiler import (ablation_table, ablation_variants, count_flops,
                       count_parameters, measure_fps, render_table)
from .trainer import (evaluate, load_checkpoint, model_from_checkpoint, train)

log = logging.getLogger(__name__)

OVERLAY_COLOR = (0, 255, 0)
OVERLAY_ALPHA = 0.4


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DrivesegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driveseg", description="drivable-area segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="flat key-value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out-dir", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out-dir", default="runs/evaluate")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="segment images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", default="runs/infer")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("images", nargs="+", help="input image files")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("profile", help="params/FLOPs/FPS of one variant")
    p.add_argument("--config", default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--out-dir", default="runs/profile")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("ablate", help="four-variant ablation table")
    p.add_argument("--config", default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.add_argument("--train-toy", action="store_true",
                   help="also train each variant on the toy set")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--out-dir", default="runs/ablate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("convert-manifest", help="write a manifest for a dataset")
    p.add_argument("--kind", required=True,
                   choices=("gmrp", "kitti_road", "folder_pairs"))
    p.add_argument("--root", required=True)
    p.add_argument("--out-manifest", required=True)
    p.set_defaults(func=cmd_convert_manifest)
    return parser


def _load_config(args) -> ExperimentConfig:
    path = getattr(args, "config", None)
    return load_experiment_config(path, getattr(args, "overrides", []))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    dataset = build_dataset(cfg.data, cfg.model.input_size)
    try:
        checkpoint, history = train(cfg.model, cfg.trainer, dataset,
                                    loss_params=cfg.loss, data_cfg=cfg.data,
                                    out_dir=out_dir)
    except (NumericsError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    model = model_from_checkpoint(checkpoint)
    report = evaluate(model, dataset.val, cfg.data, cfg.trainer.batch_size)
    (out_dir / "report.txt").write_text(report.render(), encoding="utf-8")
    best = checkpoint["train_state"]["best_monitor_value"]
    print(f"trained {len(history)} epochs; best {cfg.trainer.monitor} = {best:.4f}")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    dataset = build_dataset(cfg.data, cfg.model.input_size)
    split = getattr(dataset, args.split)
    report = evaluate(model, split, cfg.data, cfg.trainer.batch_size)
    (out_dir / "report.txt").write_text(report.render(), encoding="utf-8")
    print(report.render())
    return 0


def _write_outputs(image: np.ndarray, prob: np.ndarray, threshold: float,
                   out_dir: Path, stem: str) -> None:
    mask = (prob > threshold).astype(np.uint8)
    Image.fromarray(mask * 255).save(out_dir / f"{stem}_mask.png")
    Image.fromarray((prob * 255).astype(np.uint8)).save(
        out_dir / f"{stem}_prob.png")
    overlay = image.astype(np.float64)
    color = np.asarray(OVERLAY_COLOR, dtype=np.float64)
    sel = mask.astype(bool)
    overlay[sel] = (1 - OVERLAY_ALPHA) * overlay[sel] + OVERLAY_ALPHA * color
    Image.fromarray(overlay.astype(np.uint8)).save(
        out_dir / f"{stem}_overlay.png")


def cmd_infer(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(checkpoint)
    cfg = model.cfg
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(ExperimentConfig(model=cfg), out_dir)
    data_cfg = DataConfig()
    mean = np.asarray(data_cfg.norm_mean)
    std = np.asarray(data_cfg.norm_std)
    failures = 0
    for path in args.images:
        try:
            image = read_image(path)
            resized, _ = resize_pair(
                image, np.zeros(image.shape[:2], np.uint8), cfg.input_size)
            x = (resized.astype(np.float64) / 255.0 - mean) / std
            tensor = torch.as_tensor(
                x.transpose(2, 0, 1)[None], dtype=next(model.parameters()).dtype)
            with torch.no_grad():
                out = model(tensor)
            prob = out.final_prob[0, 0].cpu().numpy()
            if prob.shape != image.shape[:2]:
                prob = np.asarray(Image.fromarray(prob.astype(np.float32)).resize(
                    (image.shape[1], image.shape[0]), Image.BILINEAR))
            _write_outputs(image, prob, args.threshold, out_dir, Path(path).stem)
        except (DrivesegError, OSError) as exc:
            failures += 1
            print(f"error: {path}: {exc}", file=sys.stderr)
    done = len(args.images) - failures
    print(f"wrote outputs for {done}/{len(args.images)} images to {out_dir}")
    return 1 if failures else 0


def cmd_profile(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    model = build_model(cfg.model, seed=cfg.trainer.seed)
    params = count_parameters(model)
    flops = count_flops(model)
    stats = measure_fps(model, iters=args.iters)
    lines = [f"parameters: {params.total:,}"]
    for name, count in sorted(params.per_module.items()):
        lines.append(f"  {name}: {count:,}")
    lines.append(f"gflops @ {cfg.model.input_size}: {flops.total / 1e9:.2f}")
    for name, count in sorted(flops.per_module.items()):
        lines.append(f"  {name}: {count / 1e9:.2f}")
    lines.append(f"fps: mean={stats.mean_fps:.1f} p50={stats.p50:.1f} "
                 f"p95={stats.p95:.1f} ({stats.hardware}, exclusive run assumed)")
    text = "\n".join(lines) + "\n"
    (out_dir / "profile.txt").write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    rows = ablation_table(cfg.model, measure=True, iters=args.iters)

    strip_models = []
    if args.train_toy:
        toy_mious = []
        for name, variant_cfg in ablation_variants(cfg.model):
            dataset = build_dataset(cfg.data, variant_cfg.input_size)
            checkpoint, _ = train(variant_cfg, cfg.trainer, dataset,
                                  loss_params=cfg.loss, data_cfg=cfg.data)
            model = model_from_checkpoint(checkpoint)
            report = evaluate(model, dataset.val, cfg.data,
                              cfg.trainer.batch_size)
            toy_mious.append(report.aggregate["miou"])
            strip_models.append((name, model))
        for row, miou in zip(rows, toy_mious):
            row["toy_miou"] = miou
        if all(b >= a - 1e-9 for a, b in zip(toy_mious, toy_mious[1:])):
            log.info("toy mIoU is monotone non-decreasing across variants")
        else:
            log.warning("toy mIoU not monotone across variants: %s",
                        [round(m, 4) for m in toy_mious])
    else:
        strip_models = [(name, build_model(c, seed=cfg.trainer.seed).eval())
                        for name, c in ablation_variants(cfg.model)]

    _write_variant_strip(strip_models, cfg, out_dir)
    table = render_table(rows)
    (out_dir / "ablation.txt").write_text(table, encoding="utf-8")
    with open(out_dir / "ablation.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    print(table)
    return 0


def _write_variant_strip(models, cfg: ExperimentConfig, out_dir: Path) -> None:
    """Side-by-side overlay of each variant's prediction on one sample."""
    dataset = build_dataset(cfg.data, cfg.model.input_size)
    image, _ = dataset.val[0]
    panels = []
    for _, model in models:
        data_cfg = cfg.data
        x = (image.astype(np.float64) / 255.0 - np.asarray(data_cfg.norm_mean)) \
            / np.asarray(data_cfg.norm_std)
        tensor = torch.as_tensor(x.transpose(2, 0, 1)[None],
                                 dtype=next(model.parameters()).dtype)
        with torch.no_grad():
            prob = model(tensor).final_prob[0, 0].cpu().numpy()
        panel = image.astype(np.float64)
        sel = prob > 0.5
        color = np.asarray(OVERLAY_COLOR, dtype=np.float64)
        panel[sel] = (1 - OVERLAY_ALPHA) * panel[sel] + OVERLAY_ALPHA * color
        panels.append(panel.astype(np.uint8))
    strip = np.concatenate(panels, axis=1)
    Image.fromarray(strip).save(out_dir / "variant_strip.png")


def _pair_split(images_dir: Path, masks_dir: Path, names: list[str],
                split: str, root: Path) -> list[str]:
    lines = []
    for name in names:
        image = images_dir / name
        candidates = [masks_dir / name] + [
            masks_dir / (image.stem + ext) for ext in (".png", ".jpg")]
        mask = next((c for c in candidates if c.is_file()), None)
        if mask is None:
            raise LayoutError(f"no mask found for {image}")
        lines.append(f"{image.relative_to(root)}\t{mask.relative_to(root)}\t{split}")
    return lines


def cmd_convert_manifest(args) -> int:
    root = Path(args.root)
    if not root.is_dir():
        raise LayoutError(f"dataset root does not exist: {root}")
    if args.kind == "folder_pairs":
        lines = _convert_folder_pairs(root)
    elif args.kind == "gmrp":
        lines = _convert_gmrp(root)
    else:
        lines = _convert_kitti_road(root)
    out_path = Path(args.out_manifest)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + ("\n" if lines else ""),
                        encoding="utf-8")
    counts = {"train": 0, "val": 0, "test": 0}
    for line in lines:
        counts[line.rsplit("\t", 1)[1]] += 1
    print(f"wrote {out_path}: train={counts['train']} val={counts['val']} "
          f"test={counts['test']}")
    return 0


def _convert_folder_pairs(root: Path) -> list[str]:
    """Layout: images/, masks/ plus train.txt/val.txt/test.txt name lists."""
    images_dir = root / "images"
    masks_dir = root / "masks"
    missing = [str(d) for d in (images_dir, masks_dir) if not d.is_dir()]
    if missing:
        raise LayoutError(f"missing expected directories: {missing}")
    lines: list[str] = []
    any_list = False
    for split in ("train", "val", "test"):
        list_file = root / f"{split}.txt"
        if not list_file.is_file():
            continue
        any_list = True
        names = [n.strip() for n in list_file.read_text().splitlines() if n.strip()]
        lines += _pair_split(images_dir, masks_dir, names, split, root)
    if not any_list:
        names = sorted(p.name for p in images_dir.iterdir() if p.is_file())
        if not names:
            raise LayoutError(f"no images found under {images_dir}")
        lines += _pair_split(images_dir, masks_dir, names, "train", root)
    return lines


def _convert_gmrp(root: Path) -> list[str]:
    """Layout: {train,val,test}/<images-dir>/ and matching <labels-dir>/."""
    image_names = ("image", "images", "rgb")
    label_names = ("label", "labels", "gt", "masks")
    lines: list[str] = []
    missing = []
    for split in ("train", "val", "test"):
        split_dir = root / split
        if not split_dir.is_dir():
            missing.append(str(split_dir))
            continue
        images_dir = next((split_dir / n for n in image_names
                           if (split_dir / n).is_dir()), None)
        labels_dir = next((split_dir / n for n in label_names
                           if (split_dir / n).is_dir()), None)
        if images_dir is None or labels_dir is None:
            missing.append(f"{split_dir}/{{{'|'.join(image_names)}}} and "
                           f"{{{'|'.join(label_names)}}}")
            continue
        names = sorted(p.name for p in images_dir.iterdir() if p.is_file())
        lines += _pair_split(images_dir, labels_dir, names, split, root)
    if missing:
        raise LayoutError(f"missing expected directories: {missing}")
    return lines


def _convert_kitti_road(root: Path) -> list[str]:
    """Layout: training/image_2/ plus training/gt_image_2/ road labels."""
    images_dir = root / "training" / "image_2"
    gt_dir = root / "training" / "gt_image_2"
    missing = [str(d) for d in (images_dir, gt_dir) if not d.is_dir()]
    if missing:
        raise LayoutError(f"missing expected directories: {missing}")
    lines = []
    for image in sorted(images_dir.iterdir()):
        if not image.is_file():
            continue
        prefix, _, number = image.stem.partition("_")
        gt = gt_dir / f"{prefix}_road_{number}{image.suffix}"
        if gt.is_file():
            lines.append(f"{image.relative_to(root)}\t{gt.relative_to(root)}\ttrain")
    if not lines:
        raise LayoutError(f"no labeled image pairs under {images_dir}")
    return lines


if __name__ == "__main__":
    sys.exit(main())
