"""Command line front end: scene generation, full runs, metrics-only
evaluation, and frequency-kernel dumps.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .config import RunConfig, load_run_config
from .encoder import ToyEncoder
from .errors import ConfigError, OvscalError
from .io import dump_json, load_label_png, save_image_png, save_label_png
from .pipeline import build_text_bank, run_pipeline
from .scenes import generate_scene
from .sim import make_frequency_kernel


def _scene_name(index: int) -> str:
    return f"scene_{index:04d}.png"


def _eval_one(cfg: RunConfig, index: int):
    """Worker: generate one scene, run the pipeline, return everything the
    parent needs for deterministic merging."""
    image, gt = generate_scene(cfg.scene, index)
    assoc = cfg.association()
    bank = build_text_bank(
        cfg.scene.class_names, assoc, seed=cfg.seed, dim=cfg.encoder.embed_dim
    )
    encoder = ToyEncoder(cfg.encoder)
    pred, audit = run_pipeline(
        image,
        gt,
        bank,
        encoder,
        cfg.sim,
        cfg.cs,
        cfg.ensemble,
        cfg.noise,
        seed=cfg.seed + index,
        hierarchy=assoc,
    )
    return index, gt, pred, audit.records


def run_eval(config_path: str | Path, out_dir: str | Path, workers: int = 1) -> dict:
    """Full pipeline + evaluation over all configured scenes.

    Results are merged in scene-index order, so reports are byte-identical
    regardless of worker count.
    """
    cfg = load_run_config(config_path)
    out = Path(out_dir)
    (out / "preds").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)

    indices = list(range(cfg.scene.image_count))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_eval_one, [cfg] * len(indices), indices))
    else:
        results = [_eval_one(cfg, i) for i in indices]
    results.sort(key=lambda r: r[0])

    assoc = cfg.association()
    counts = metrics_mod.ConfusionCounts.zeros(cfg.scene.num_classes)
    audit_lines = []
    for index, gt, pred, records in results:
        counts = counts + metrics_mod.accumulate_confusion(
            pred, gt, cfg.scene.num_classes
        )
        save_label_png(pred, out / "preds" / _scene_name(index))
        save_label_png(gt, out / "gt" / _scene_name(index))
        audit_lines.append(
            json.dumps({"image": index, "proposals": records}, sort_keys=True)
        )

    rep = metrics_mod.report(
        counts,
        assoc,
        class_names=cfg.scene.class_names,
        gt_present_only=cfg.metrics.gt_present_only,
    )
    dump_json(rep, out / "report.json")
    tmp = out / "audit.jsonl.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(audit_lines) + "\n")
    os.replace(tmp, out / "audit.jsonl")
    return rep


def _cmd_gen(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    for i in range(cfg.scene.image_count):
        image, gt = generate_scene(cfg.scene, i)
        save_image_png(image, out / "images" / _scene_name(i))
        save_label_png(gt, out / "gt" / _scene_name(i))
    print(f"wrote {cfg.scene.image_count} scenes to {out}")
    return 0


def _cmd_run(args) -> int:
    rep = run_eval(args.config, args.out, workers=args.workers)
    print(f"miou={rep['miou']} msg_iou={rep['msg_iou']}")
    return 0


def _cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    names = sorted(p.name for p in pred_dir.glob("*.png"))
    if not names:
        raise ConfigError(f"no prediction PNGs found in {pred_dir}")
    assoc = metrics_mod.load_association(args.assoc, args.classes)
    counts = metrics_mod.ConfusionCounts.zeros(args.classes)
    for name in names:
        gt_path = gt_dir / name
        if not gt_path.exists():
            raise ConfigError(f"missing ground-truth map {gt_path}")
        counts = counts + metrics_mod.accumulate_confusion(
            load_label_png(pred_dir / name), load_label_png(gt_path), args.classes
        )
    rep = metrics_mod.report(counts, assoc)
    dump_json(rep, args.out)
    print(f"miou={rep['miou']} msg_iou={rep['msg_iou']}")
    return 0


def _cmd_kernel(args) -> int:
    kernel = make_frequency_kernel(args.h, args.w, args.sigma)
    np.savetxt(args.out, kernel.coeffs, delimiter=",")
    print(f"wrote {args.h}x{args.w} kernel (sigma={args.sigma}) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovscal",
        description="Synthetic open-vocabulary segmentation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write scene images and GT label maps")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen)

    run = sub.add_parser("run", help="full pipeline + evaluation")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="metrics-only over existing label maps")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--assoc", required=True)
    ev.add_argument("--classes", type=int, required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=_cmd_eval)

    ker = sub.add_parser("kernel", help="dump a frequency kernel as CSV")
    ker.add_argument("--h", type=int, required=True)
    ker.add_argument("--w", type=int, required=True)
    ker.add_argument("--sigma", type=float, required=True)
    ker.add_argument("--out", required=True)
    ker.set_defaults(func=_cmd_kernel)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OvscalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
