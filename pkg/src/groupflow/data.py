"""Synthetic multi-frame scenes: textured shapes translating over a textured
background at constant integer velocities, with exact piecewise-constant
ground-truth flow and geometric occlusion masks.

A pixel of frame k is occluded (unmatched) iff its target position in frame
k+1 falls outside the image or is covered there by an object drawn above its
own layer. Because every object translates rigidly at integer speed, both the
flow and the mask are exact.
"""

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class SyntheticSample:
    frames: np.ndarray    # (T, H, W, 3) float32 in [0, 1]
    gt_flows: np.ndarray  # (T-1, H, W, 2) float32, full-resolution pixels
    occ_masks: np.ndarray  # (T-1, H, W) bool, True = unmatched

    def frames_tensor(self, device=None, dtype=torch.float32) -> torch.Tensor:
        """Frames as (T, 3, H, W)."""
        return torch.from_numpy(self.frames).permute(0, 3, 1, 2).to(device=device, dtype=dtype)

    def flows_tensor(self, device=None, dtype=torch.float32) -> torch.Tensor:
        """Ground-truth flows as (T-1, 2, H, W)."""
        return torch.from_numpy(self.gt_flows).permute(0, 3, 1, 2).to(device=device, dtype=dtype)


def _smooth_texture(rng, h, w, cells=6, detail=0.15):
    """Random texture: low-res RGB blobs upsampled, plus fine per-pixel grain.

    The grain translates exactly with its object under integer motion, so it
    keeps brightness constancy while giving the matcher distinctive detail.
    """
    coarse = rng.uniform(0.0, 1.0, size=(cells, cells, 3)).astype(np.float32)
    t = torch.from_numpy(coarse).permute(2, 0, 1).unsqueeze(0)
    up = torch.nn.functional.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)
    base = up.squeeze(0).permute(1, 2, 0).numpy()
    grain = rng.uniform(-detail, detail, size=(h, w, 3)).astype(np.float32)
    return np.clip(base + grain, 0.0, 1.0)


def _sample_velocity(rng, max_disp, min_speed):
    """Integer velocity with speed in [min_speed, max_disp] and |vx|,|vy| <= max_disp."""
    if max_disp == 0:
        return np.zeros(2, dtype=np.int64)
    for _ in range(1000):
        angle = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(min_speed, max_disp)
        v = np.rint([speed * np.cos(angle), speed * np.sin(angle)]).astype(np.int64)
        if np.hypot(*v) >= min_speed and np.abs(v).max() <= max_disp:
            return v
    return np.array([min(max_disp, max(1, int(min_speed))), 0], dtype=np.int64)


def _shape_mask(kind, height, width, h, w):
    """Boolean mask of a shape inside its (h, w) bounding box."""
    if kind == "rect":
        return np.ones((height, width), dtype=bool)
    ys, xs = np.mgrid[0:height, 0:width]
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    return ((ys - cy) / max(cy, 0.5)) ** 2 + ((xs - cx) / max(cx, 0.5)) ** 2 <= 1.0


def _make_shape(rng, sh, sw):
    kind = "rect" if rng.random() < 0.5 else "ellipse"
    mask = _shape_mask(kind, sh, sw, sh, sw)
    tex = _smooth_texture(rng, sh, sw, cells=4)
    # bias each shape's palette so objects separate from the background
    tint = rng.uniform(0.0, 1.0, size=3).astype(np.float32)
    tex = np.clip(0.55 * tex + 0.45 * tint, 0.0, 1.0)
    return mask, tex


def gen_moving_shapes(seed, count, size=64, frames_per_sample=3, max_disp=8,
                      num_shapes=(1, 3), min_speed=None, static=False,
                      shape_size=(12, 28), vanish_prob=0.5):
    """Yield `count` SyntheticSample instances; the seed fixes the stream.

    size must divide by 8; max_disp must stay below size/4 so objects remain
    mostly in frame. min_speed defaults to max_disp/2, which keeps the mean
    displacement magnitude well away from zero.

    With probability vanish_prob a scene also contains a small shape that a
    larger occluder fully covers by the final frame: its last-pair motion is
    recoverable only from the earlier frames, not from within the pair.
    """
    if size % 8:
        raise ValueError(f"size must divide by 8, got {size}")
    if max_disp >= size / 4:
        raise ValueError(f"max_disp {max_disp} too large for size {size}")
    if min_speed is None:
        min_speed = max_disp / 2
    rng = np.random.default_rng(seed)
    t_frames = frames_per_sample

    for _ in range(count):
        margin = max_disp * (t_frames - 1) + 2
        ch, cw = size + 2 * margin, size + 2 * margin
        bg_canvas = _smooth_texture(rng, ch, cw, cells=8)
        v_bg = np.zeros(2, dtype=np.int64) if static else _sample_velocity(rng, max_disp, min_speed)

        n_shapes = int(rng.integers(num_shapes[0], num_shapes[1] + 1))
        shapes = []
        for _ in range(n_shapes):
            sh = int(rng.integers(shape_size[0], shape_size[1] + 1))
            sw = int(rng.integers(shape_size[0], shape_size[1] + 1))
            mask, tex = _make_shape(rng, sh, sw)
            pos = np.array([
                rng.integers(0, size - sh + 1),
                rng.integers(0, size - sw + 1),
            ], dtype=np.int64)
            vel = np.zeros(2, dtype=np.int64) if static else _sample_velocity(rng, max_disp, min_speed)
            shapes.append({"mask": mask, "tex": tex, "pos": pos, "vel": vel})

        room = size - 15 - max_disp * t_frames
        if not static and room > max_disp and rng.random() < vanish_prob:
            # a small shape, then an occluder sized and steered to cover it
            # completely at the final frame
            sh = int(rng.integers(10, 15))
            sw = int(rng.integers(10, 15))
            mask, tex = _make_shape(rng, sh, sw)
            pos = np.array([
                rng.integers(max_disp, size - sh - max_disp * t_frames),
                rng.integers(max_disp, size - sw - max_disp * t_frames),
            ], dtype=np.int64)
            vel = _sample_velocity(rng, max_disp, min_speed)
            shapes.append({"mask": mask, "tex": tex, "pos": pos, "vel": vel})

            oh = sh + 2 * max_disp + 4
            ow = sw + 2 * max_disp + 4
            omask, otex = _make_shape(rng, oh, ow)
            ovel = _sample_velocity(rng, max_disp, min_speed)
            small_final = pos + (t_frames - 1) * vel[::-1]
            opos_final = small_final - np.array([(oh - sh) // 2, (ow - sw) // 2])
            opos = opos_final - (t_frames - 1) * ovel[::-1]
            shapes.append({"mask": omask, "tex": otex,
                           "pos": opos.astype(np.int64), "vel": ovel})

        frames = np.empty((t_frames, size, size, 3), dtype=np.float32)
        layers = np.zeros((t_frames, size, size), dtype=np.int64)  # 0 = background
        for t in range(t_frames):
            oy = margin - t * v_bg[1]
            ox = margin - t * v_bg[0]
            frame = bg_canvas[oy:oy + size, ox:ox + size].copy()
            layer = np.zeros((size, size), dtype=np.int64)
            for idx, s in enumerate(shapes, start=1):
                y = int(s["pos"][0] + t * s["vel"][1])
                x = int(s["pos"][1] + t * s["vel"][0])
                sh, sw = s["mask"].shape
                y0, y1 = max(y, 0), min(y + sh, size)
                x0, x1 = max(x, 0), min(x + sw, size)
                if y0 >= y1 or x0 >= x1:
                    continue
                sub = s["mask"][y0 - y:y1 - y, x0 - x:x1 - x]
                frame[y0:y1, x0:x1][sub] = s["tex"][y0 - y:y1 - y, x0 - x:x1 - x][sub]
                layer[y0:y1, x0:x1][sub] = idx
            frames[t] = frame
            layers[t] = layer

        velocities = np.stack([v_bg] + [s["vel"] for s in shapes])  # (n+1, 2) as (vx, vy)
        gt_flows = velocities[layers[:-1]].astype(np.float32)  # (T-1, H, W, 2)

        occ = np.zeros((t_frames - 1, size, size), dtype=bool)
        ys, xs = np.mgrid[0:size, 0:size]
        for t in range(t_frames - 1):
            tx = xs + gt_flows[t, :, :, 0].astype(np.int64)
            ty = ys + gt_flows[t, :, :, 1].astype(np.int64)
            outside = (tx < 0) | (tx >= size) | (ty < 0) | (ty >= size)
            txc = np.clip(tx, 0, size - 1)
            tyc = np.clip(ty, 0, size - 1)
            covered = layers[t + 1][tyc, txc] != layers[t]
            occ[t] = outside | covered
        yield SyntheticSample(frames, gt_flows, occ)


def sample_batch(samples, device=None):
    """Stack SyntheticSamples into training tensors.

    Returns frames (B, T, 3, H, W), flows (B, T-1, 2, H, W), occ (B, T-1, H, W).
    """
    frames = torch.stack([s.frames_tensor(device) for s in samples])
    flows = torch.stack([s.flows_tensor(device) for s in samples])
    occ = torch.stack([torch.from_numpy(s.occ_masks.copy()) for s in samples]).to(device)
    return frames, flows, occ
