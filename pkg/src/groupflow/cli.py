"""Command-line entry points: train, infer, eval, bench.

Every subcommand resolves its configuration (file plus overrides), writes the
effective snapshot into the output directory before doing any work, and exits
nonzero with a message on the enumerated error conditions.
"""

import argparse
import os
import statistics
import sys
from pathlib import Path

import numpy as np
import torch

from . import pipeline
from .config import ConfigError, config_snapshot_text, load_configs
from .flow_io import (FlowFormatError, list_frames, read_flow_any, read_image,
                      read_mask, write_flo, write_image)
from .metrics import EmptyRegionError, aggregate_reports, build_report
from .model import MultiFrameFlowNet
from .training import TrainingDiverged, load_checkpoint, set_deterministic, train
from .visualize import flow_to_color


class CliError(RuntimeError):
    pass


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("GROUPFLOW_OUTPUT_DIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolve_configs(args):
    overrides = list(args.override or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "deterministic", False):
        overrides.append("train.deterministic=true")
    return load_configs(args.config, overrides)


def _write_snapshot(out_dir, model_cfg, train_cfg):
    text = config_snapshot_text((model_cfg, "model."), (train_cfg, "train."))
    (out_dir / "config_effective.cfg").write_text(text)


def cmd_train(args) -> int:
    out_dir = _out_dir(args)
    model_cfg, train_cfg = _resolve_configs(args)
    _write_snapshot(out_dir, model_cfg, train_cfg)
    result = train(train_cfg, model_cfg, out_dir)
    print(f"checkpoint: {result.checkpoint}")
    print(f"best checkpoint: {result.best_checkpoint}")
    if result.best_val_epe is not None:
        print(f"best val epe: {result.best_val_epe:.4f}")
    return 0


def _load_video(frames_dir):
    paths = list_frames(frames_dir)
    if len(paths) < 2:
        raise CliError(f"need at least 2 frames in {frames_dir}, found {len(paths)}")
    images = [read_image(p) for p in paths]
    shape = images[0].shape
    for p, img in zip(paths, images):
        if img.shape != shape:
            raise CliError(f"frame {p} has shape {img.shape}, expected {shape}")
    if shape[0] % 8 or shape[1] % 8:
        raise CliError(f"frame dims {shape[:2]} must divide by 8")
    return torch.stack([torch.from_numpy(img).permute(2, 0, 1) for img in images])


def cmd_infer(args) -> int:
    out_dir = _out_dir(args)
    model_cfg, train_cfg = _resolve_configs(args)
    _write_snapshot(out_dir, model_cfg, train_cfg)
    if train_cfg.deterministic:
        set_deterministic(train_cfg.seed)

    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        model = MultiFrameFlowNet(model_cfg)
    model.eval()

    frames = _load_video(args.frames)
    if args.pipeline == "recursive":
        flows, ledger = pipeline.recursive_baseline(frames, model, args.group_size)
    else:
        flows, ledger, _ = pipeline.run_video(frames, model, args.group_size)
    for k, flow in enumerate(flows):
        flow_np = flow.permute(1, 2, 0).numpy()
        write_flo(out_dir / f"flow_{k:06d}.flo", flow_np)
        if args.viz:
            write_image(out_dir / f"flow_{k:06d}.png", flow_to_color(flow_np))
    print(f"wrote {len(flows)} flow files to {out_dir}")
    print(ledger.to_text())
    return 0


def cmd_eval(args) -> int:
    out_dir = _out_dir(args)
    model_cfg, train_cfg = _resolve_configs(args)
    _write_snapshot(out_dir, model_cfg, train_cfg)

    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    preds = sorted(p for p in pred_dir.iterdir() if p.suffix in (".flo", ".png"))
    if not preds:
        raise CliError(f"no flow files in {pred_dir}")
    reports, lines = [], []
    for pred_path in preds:
        candidates = [gt_dir / pred_path.name,
                      gt_dir / (pred_path.stem + ".flo"), gt_dir / (pred_path.stem + ".png")]
        gt_path = next((c for c in candidates if c.is_file()), None)
        if gt_path is None:
            raise CliError(f"missing ground truth for {pred_path.name} in {gt_dir}")
        pred, _ = read_flow_any(pred_path)
        gt, valid = read_flow_any(gt_path)
        occ = None
        if args.masks:
            mask_path = Path(args.masks) / (pred_path.stem + ".png")
            if not mask_path.is_file():
                raise CliError(f"missing occlusion mask {mask_path}")
            occ = read_mask(mask_path)
        try:
            report = build_report(pred, gt, valid=valid, occ=occ)
        except EmptyRegionError as exc:
            raise CliError(f"{pred_path.name}: {exc}") from exc
        reports.append(report)
        lines.append(f"file={pred_path.name} {report.to_text()}")

    agg = aggregate_reports(reports)
    lines.append(f"aggregate {agg.to_text()}")
    (out_dir / "eval_report.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


def cmd_bench(args) -> int:
    out_dir = _out_dir(args)
    model_cfg, train_cfg = _resolve_configs(args)
    _write_snapshot(out_dir, model_cfg, train_cfg)
    if train_cfg.deterministic:
        set_deterministic(train_cfg.seed)

    model = MultiFrameFlowNet(model_cfg)
    model.eval()
    size = train_cfg.frame_size
    rng = np.random.default_rng(train_cfg.seed)
    frames = torch.from_numpy(
        rng.random((args.num_frames, 3, size, size), dtype=np.float32)
    )
    records = pipeline.benchmark(frames, model, args.group_size, runs=args.runs)
    lines = [r.to_text() for r in records]
    for mode in ("sim", "recursive"):
        times = [r.wall_time for r in records if r.mode == mode]
        mean = statistics.mean(times)
        std = statistics.stdev(times) if len(times) > 1 else 0.0
        lines.append(f"summary mode={mode} runs={len(times)} wall_mean={mean:.4f} wall_std={std:.4f}")
    (out_dir / "bench_report.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupflow",
                                     description="Multi-frame optical flow over frame groups")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="config override, repeatable")
        p.add_argument("--out", help="output directory (default $GROUPFLOW_OUTPUT_DIR or .)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--deterministic", action="store_true",
                       help="force deterministic execution")

    p = sub.add_parser("train", help="run the toy training loop")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="estimate flow over a directory of frames")
    common(p)
    p.add_argument("--frames", required=True, help="directory of ordered frame images")
    p.add_argument("--checkpoint", help="checkpoint .npz (random weights if omitted)")
    p.add_argument("--pipeline", choices=("sim", "recursive"), default="sim",
                   help="sim = single-pass in-batch grouped estimation")
    p.add_argument("--group-size", type=int, default=3, metavar="T")
    p.add_argument("--viz", action="store_true", help="also write color renderings")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="compare predicted flows against ground truth")
    common(p)
    p.add_argument("--pred", required=True, help="directory of predicted flows")
    p.add_argument("--gt", required=True, help="directory of ground-truth flows")
    p.add_argument("--masks", help="directory of occlusion masks (PNG, nonzero = unmatched)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="compare pipeline compute on synthetic frames")
    common(p)
    p.add_argument("--num-frames", type=int, default=10)
    p.add_argument("--group-size", type=int, default=3, metavar="T")
    p.add_argument("--runs", type=int, default=5)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ConfigError, FlowFormatError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
