"""Flow file formats and image helpers.

.flo layout: little-endian float32 magic 202021.25, int32 width, int32 height,
then row-major interleaved (u, v) float32 pairs. Round-trips are bit-exact.

KITTI-style PNG: 16-bit, 3 channels; stored value = flow * 64 + 2^15 per
component, third channel = validity. Round-trip error is at most 1/64 px.
"""

import struct
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

FLO_MAGIC = 202021.25


class FlowFormatError(ValueError):
    pass


class FlowRangeError(ValueError):
    pass


def write_flo(path, flow):
    """Write (H, W, 2) flow; values are stored as float32."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ValueError(f"expected (H, W, 2), got {flow.shape}")
    if not np.isfinite(flow).all():
        raise ValueError("flow contains non-finite values")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", FLO_MAGIC, w, h))
        f.write(flow.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FlowFormatError(f"{path}: truncated header at offset {len(data)} (need 12 bytes)")
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: bad magic {magic!r} at offset 0")
    expected = 12 + 8 * w * h
    if w <= 0 or h <= 0 or len(data) < expected:
        raise FlowFormatError(
            f"{path}: truncated payload at offset {len(data)} (expected {expected} bytes)"
        )
    flow = np.frombuffer(data[12:expected], dtype="<f4").reshape(h, w, 2)
    return flow.copy()


def write_kitti_png(path, flow, valid=None):
    """Write (H, W, 2) flow with |flow| < 512 plus an optional validity mask."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ValueError(f"expected (H, W, 2), got {flow.shape}")
    if np.abs(flow).max(initial=0.0) >= 512.0:
        raise FlowRangeError(f"flow magnitude {np.abs(flow).max():.1f} >= 512 px")
    h, w = flow.shape[:2]
    if valid is None:
        valid = np.ones((h, w), dtype=bool)
    stored = np.empty((h, w, 3), dtype=np.uint16)
    stored[..., 0] = np.rint(flow[..., 0] * 64.0 + 2 ** 15).astype(np.uint16)
    stored[..., 1] = np.rint(flow[..., 1] * 64.0 + 2 ** 15).astype(np.uint16)
    stored[..., 2] = np.asarray(valid).astype(np.uint16)
    # cv2 writes BGR, so reverse to keep (u, v, valid) channel order in the file
    if not cv2.imwrite(str(path), stored[..., ::-1]):
        raise IOError(f"failed to write {path}")


def read_kitti_png(path):
    """Returns (flow (H, W, 2) float32, valid (H, W) bool)."""
    raw = cv2.imread(str(path), cv2.IMREAD_ANYDEPTH | cv2.IMREAD_COLOR)
    if raw is None:
        raise FlowFormatError(f"cannot read {path}")
    if raw.dtype != np.uint16 or raw.ndim != 3:
        raise FlowFormatError(f"{path}: expected 16-bit 3-channel PNG, got {raw.dtype}")
    stored = raw[..., ::-1]  # back to (u, v, valid)
    flow = (stored[..., :2].astype(np.float32) - 2.0 ** 15) / 64.0
    valid = stored[..., 2] > 0
    return flow, valid


def read_flow_any(path):
    """Dispatch on extension; returns (flow, valid-or-None)."""
    path = Path(path)
    if path.suffix == ".flo":
        return read_flo(path), None
    if path.suffix == ".png":
        return read_kitti_png(path)
    raise FlowFormatError(f"unsupported flow format: {path.suffix!r}")


def read_image(path) -> np.ndarray:
    """8-bit image file -> (H, W, 3) float32 in [0, 1]."""
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return img / 255.0


def write_image(path, rgb):
    """(H, W, 3) float in [0, 1] or uint8 -> 8-bit image file."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb).save(path)


def read_mask(path) -> np.ndarray:
    """Binary mask image: nonzero pixels are True."""
    return np.asarray(Image.open(path).convert("L")) > 0


def list_frames(directory, extensions=(".png", ".jpg", ".jpeg", ".ppm")):
    """Lexicographically sorted frame paths in a directory."""
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in extensions)
