"""Supervision and the desk-scale training loop.

The sequence loss weights each refinement iteration by theta^(N-i), so late
iterations dominate; the schedule is one-cycle (linear warmup, anneal to a
floor); gradients are verified against central finite differences on randomly
sampled parameters.
"""

import json
import random
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig, asdict_flat
from .data import gen_moving_shapes, sample_batch
from .metrics import epe as epe_metric
from .model import MultiFrameFlowNet


class TrainingDiverged(RuntimeError):
    pass


def set_deterministic(seed: int):
    """Seed every RNG and force deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def sequence_loss(preds, gt_flows, theta=0.8, valid=None, kept=None):
    """Weighted multi-iteration flow loss.

    preds: list over N iterations of (B, P, 2, H, W) full-resolution flows.
    gt_flows: (B, P, 2, H, W). Iteration i (1-based) gets weight theta^(N-i).
    valid: optional (B, P, H, W) bool; kept: optional (P,) bool marking real
    (non-padded) pairs. The per-pair term is the mean over counted pixels of
    the per-pixel L1 distance |du| + |dv|, summed over pairs and iterations.
    """
    if not preds:
        raise ValueError("need at least one prediction")
    if not 0 < theta <= 1:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    n = len(preds)
    b, p = gt_flows.shape[:2]
    mask = gt_flows.new_ones((b, p) + gt_flows.shape[-2:])
    if valid is not None:
        mask = mask * valid.to(mask.dtype)
    if kept is not None:
        mask = mask * torch.as_tensor(kept, device=mask.device).to(mask.dtype).view(1, p, 1, 1)
    denom = mask.sum(dim=(0, 2, 3)).clamp(min=1.0)  # counted pixels per pair

    total = gt_flows.new_zeros(())
    for i, pred in enumerate(preds):
        if pred.shape != gt_flows.shape:
            raise ValueError(
                f"prediction shape {tuple(pred.shape)} != ground truth {tuple(gt_flows.shape)}"
            )
        l1 = (pred - gt_flows).abs().sum(dim=2)  # (B, P, H, W)
        per_pair = (l1 * mask).sum(dim=(0, 2, 3)) / denom
        total = total + theta ** (n - 1 - i) * per_pair.sum()
    return total


def one_cycle_lr(step, total_steps, peak_lr, warmup_frac=0.05, floor_ratio=0.04,
                 anneal="linear"):
    """One-cycle schedule: linear warmup to the peak, then anneal to a floor."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    floor = peak_lr * floor_ratio
    warmup_steps = max(1, round(warmup_frac * total_steps))
    if step <= warmup_steps:
        return floor + (peak_lr - floor) * step / warmup_steps
    frac = (step - warmup_steps) / max(1, total_steps - warmup_steps)
    if anneal == "cosine":
        return floor + (peak_lr - floor) * 0.5 * (1 + np.cos(np.pi * frac))
    return peak_lr + (floor - peak_lr) * frac


def save_checkpoint(path, model: MultiFrameFlowNet, manifest: dict):
    """Flat container of named arrays plus a JSON manifest under '__manifest__'."""
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    manifest = dict(manifest)
    manifest.setdefault("model_config", asdict_flat(model.cfg))
    arrays["__manifest__"] = np.array(json.dumps(manifest))
    np.savez(path, **arrays)


def load_checkpoint(path, model: MultiFrameFlowNet | None = None):
    """Returns (model, manifest); builds the model from the stored config if absent."""
    with np.load(path, allow_pickle=False) as data:
        manifest = json.loads(str(data["__manifest__"]))
        if model is None:
            model = MultiFrameFlowNet(ModelConfig(**manifest["model_config"]))
        state = {k: torch.from_numpy(data[k]) for k in data.files if k != "__manifest__"}
    model.load_state_dict(state)
    return model, manifest


def _final_epe(model, frames, gt_flows):
    """Mean endpoint error of the final-iteration flows over a batch."""
    with torch.no_grad():
        out = model(frames, iterations=model.cfg.iterations)
    pred = out["flows"][-1]
    errs = []
    for b in range(pred.shape[0]):
        for p in range(pred.shape[1]):
            errs.append(epe_metric(
                pred[b, p].permute(1, 2, 0).numpy(), gt_flows[b, p].permute(1, 2, 0).numpy()
            ))
    return float(np.mean(errs))


@dataclass
class TrainResult:
    checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    final_loss: float | None
    best_val_epe: float | None


def train(train_cfg: TrainConfig, model_cfg: ModelConfig | None = None, out_dir=".",
          model: MultiFrameFlowNet | None = None, progress=None):
    """Run the toy training loop; returns checkpoint paths and the metric log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if train_cfg.deterministic:
        set_deterministic(train_cfg.seed)
    if model is None:
        model_cfg = model_cfg or ModelConfig.tiny(iterations=train_cfg.iterations)
        model = MultiFrameFlowNet(model_cfg)

    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr,
                            weight_decay=train_cfg.weight_decay)

    val_stream = gen_moving_shapes(
        train_cfg.seed + 10_000, train_cfg.val_samples, size=train_cfg.frame_size,
        frames_per_sample=train_cfg.frames_per_group, max_disp=train_cfg.max_disp,
    )
    val_frames, val_flows, _ = sample_batch(list(val_stream))

    train_stream = gen_moving_shapes(
        train_cfg.seed, max(1, train_cfg.steps) * train_cfg.batch_size,
        size=train_cfg.frame_size, frames_per_sample=train_cfg.frames_per_group,
        max_disp=train_cfg.max_disp,
    )

    log_path = out_dir / "metrics.log"
    ckpt_path = out_dir / "checkpoint.npz"
    best_path = out_dir / "checkpoint_best.npz"
    log_path.write_text("")
    best_val = None
    final_loss = None
    start = time.time()

    def log(line):
        with open(log_path, "a") as fh:
            fh.write(line + "\n")

    def manifest(step, val_epe=None):
        return {
            "step": step,
            "val_epe": val_epe,
            "train_config": asdict_flat(train_cfg),
            "elapsed_sec": round(time.time() - start, 2),
        }

    def run_validation(step):
        nonlocal best_val
        model.eval()
        val = _final_epe(model, val_frames, val_flows)
        model.train()
        log(f"step={step} val_epe={val:.4f}")
        if best_val is None or val < best_val:
            best_val = val
            save_checkpoint(best_path, model, manifest(step, val))
        return val

    model.train()
    for step in range(train_cfg.steps):
        lr = one_cycle_lr(step + 1, train_cfg.steps, train_cfg.lr, train_cfg.warmup_frac)
        for group in opt.param_groups:
            group["lr"] = lr
        batch = [next(train_stream) for _ in range(train_cfg.batch_size)]
        frames, gt_flows, _ = sample_batch(batch)
        preds = model(frames, iterations=train_cfg.iterations)["flows"]
        loss = sequence_loss(preds, gt_flows, theta=train_cfg.theta)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss.item()} at step {step}")
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.clip)
        opt.step()
        final_loss = float(loss.detach())
        if (step + 1) % train_cfg.log_interval == 0 or step == train_cfg.steps - 1:
            log(f"step={step + 1} loss={final_loss:.4f} lr={lr:.6g}")
        if (step + 1) % train_cfg.val_interval == 0 or step == train_cfg.steps - 1:
            val = run_validation(step + 1)
            if progress is not None:
                progress(step + 1, final_loss, val)

    if train_cfg.steps == 0:
        save_checkpoint(best_path, model, manifest(0))
    save_checkpoint(ckpt_path, model, manifest(train_cfg.steps, best_val))
    return TrainResult(ckpt_path, best_path, log_path, final_loss, best_val)


def grad_check(model, frames, gt_flows, iterations=2, theta=0.8, num_params=200,
               h=1e-5, seed=0, corrupt_index=None):
    """Max relative error between autograd and central finite differences.

    Runs in double precision on `num_params` randomly sampled parameter
    coordinates. corrupt_index (for negative controls) doubles one analytic
    gradient entry before comparing.
    """
    model = model.double()
    frames = frames.double()
    gt_flows = gt_flows.double()

    def loss_fn():
        preds = model(frames, iterations=iterations)["flows"]
        return sequence_loss(preds, gt_flows, theta=theta)

    model.zero_grad()
    loss = loss_fn()
    loss.backward()

    params = [p for p in model.parameters() if p.requires_grad]
    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(num_params, offsets[-1]), replace=False)

    max_rel = 0.0
    with torch.no_grad():
        for count, flat_idx in enumerate(sorted(picks)):
            pi = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
            local = int(flat_idx - offsets[pi])
            p = params[pi]
            analytic = float(p.grad.reshape(-1)[local])
            if corrupt_index is not None and count == corrupt_index:
                analytic *= 2.0
            orig = float(p.data.reshape(-1)[local])
            p.data.reshape(-1)[local] = orig + h
            up = float(loss_fn())
            p.data.reshape(-1)[local] = orig - h
            down = float(loss_fn())
            p.data.reshape(-1)[local] = orig
            fd = (up - down) / (2 * h)
            rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-6)
            max_rel = max(max_rel, rel)
    return max_rel
