"""All-pairs correlation volumes, mean-pooled pyramids, and radius-bounded lookups.

The volume holds raw dot products between every source and target position of
two 1/8-resolution feature maps. Pyramid level l mean-pools the target
coordinates with a 2^l x 2^l window; lookups sample a (2r+1)^2 grid around the
flow target at every level and concatenate the results channel-wise.
"""

import torch


class CorrelationPyramid:
    """Level 0 is the raw volume; deeper levels mean-pool target coordinates.

    Levels are stored as (B*H*W, 1, Hl, Wl) so each source position owns a 2D
    map over target positions. Construction stops at the deepest level whose
    target dims are still even, rather than padding.
    """

    def __init__(self, levels, batch, source_shape):
        self.levels = levels
        self.batch = batch
        self.source_shape = source_shape  # (H, W) of the source grid

    @property
    def num_levels(self):
        return len(self.levels)


def build_volume(feat1: torch.Tensor, feat2: torch.Tensor) -> torch.Tensor:
    """All-pairs dot products: out[b, i, j, m, n] = <feat1[b,:,i,j], feat2[b,:,m,n]>.

    Both maps must be (B, C, H, W) with identical shapes.
    """
    if feat1.shape != feat2.shape:
        raise ValueError(f"feature shapes differ: {tuple(feat1.shape)} vs {tuple(feat2.shape)}")
    if feat1.dim() != 4:
        raise ValueError(f"expected (B, C, H, W), got {tuple(feat1.shape)}")
    b, c, h, w = feat1.shape
    f1 = feat1.reshape(b, c, h * w)
    f2 = feat2.reshape(b, c, h * w)
    vol = torch.bmm(f1.transpose(1, 2), f2)  # (B, HW, HW)
    return vol.reshape(b, h, w, h, w)


def build_pyramid(volume: torch.Tensor, num_levels: int) -> CorrelationPyramid:
    """Mean-pool the target coordinates of an all-pairs volume into a pyramid.

    volume: (B, H, W, H2, W2). Level l is the 2^l x 2^l windowed mean of level
    0 over (m, n). Stops early if the target dims stop dividing by 2.
    """
    if num_levels < 1:
        raise ValueError(f"num_levels must be >= 1, got {num_levels}")
    if volume.dim() != 5:
        raise ValueError(f"expected (B, H, W, H2, W2), got {tuple(volume.shape)}")
    b, h, w, h2, w2 = volume.shape
    level = volume.reshape(b * h * w, 1, h2, w2)
    levels = [level]
    for _ in range(num_levels - 1):
        h2, w2 = level.shape[-2:]
        if h2 % 2 or w2 % 2:
            break
        level = torch.nn.functional.avg_pool2d(level, 2, stride=2)
        levels.append(level)
    return CorrelationPyramid(levels, b, (h, w))


def _bilinear_gather(level: torch.Tensor, cx: torch.Tensor, cy: torch.Tensor,
                     dx: torch.Tensor, dy: torch.Tensor) -> torch.Tensor:
    """Sample level (N, Hl, Wl) at centers (N, 1) plus integer offsets (1, K).

    Bilinear with clamp-to-edge. Offsets being integers, the fractional weights
    depend on the center alone, so they are computed once per center.
    """
    n, hl, wl = level.shape
    x0 = torch.floor(cx)
    y0 = torch.floor(cy)
    wx = cx - x0  # (N, 1)
    wy = cy - y0
    xi = x0.long() + dx.long()  # (N, K)
    yi = y0.long() + dy.long()
    flat = level.reshape(n, hl * wl)

    def gather(yy, xx):
        yy = yy.clamp(0, hl - 1)
        xx = xx.clamp(0, wl - 1)
        return torch.gather(flat, 1, yy * wl + xx)

    top = gather(yi, xi) * (1 - wx) + gather(yi, xi + 1) * wx
    bot = gather(yi + 1, xi) * (1 - wx) + gather(yi + 1, xi + 1) * wx
    return top * (1 - wy) + bot * wy


def lookup(pyramid: CorrelationPyramid, flow: torch.Tensor, radius: int) -> torch.Tensor:
    """Sample (2r+1)^2 correlation values around position+flow at every level.

    flow: (B, 2, H, W) at 1/8 resolution, channels (horizontal, vertical).
    Returns (B, L*(2r+1)^2, H, W), levels concatenated in order.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    b, two, h, w = flow.shape
    if two != 2:
        raise ValueError(f"flow must have 2 channels, got {two}")
    if (h, w) != pyramid.source_shape or b != pyramid.batch:
        raise ValueError("flow grid does not match the pyramid's source grid")

    device, dtype = flow.device, flow.dtype
    ys, xs = torch.meshgrid(
        torch.arange(h, device=device, dtype=dtype),
        torch.arange(w, device=device, dtype=dtype),
        indexing="ij",
    )
    cx = (xs.unsqueeze(0) + flow[:, 0]).reshape(b * h * w, 1)  # (N, 1)
    cy = (ys.unsqueeze(0) + flow[:, 1]).reshape(b * h * w, 1)

    side = 2 * radius + 1
    dy, dx = torch.meshgrid(
        torch.arange(-radius, radius + 1, device=device, dtype=dtype),
        torch.arange(-radius, radius + 1, device=device, dtype=dtype),
        indexing="ij",
    )
    dx = dx.reshape(1, side * side)
    dy = dy.reshape(1, side * side)

    out = []
    for lvl, level in enumerate(pyramid.levels):
        scale = 2.0 ** lvl
        sampled = _bilinear_gather(level.squeeze(1), cx / scale, cy / scale, dx, dy)
        out.append(sampled)  # (N, side*side)
    feat = torch.cat(out, dim=1)  # (N, L*side*side)
    return feat.reshape(b, h, w, -1).permute(0, 3, 1, 2).contiguous()


def corr_feature_channels(num_levels: int, radius: int) -> int:
    return num_levels * (2 * radius + 1) ** 2
