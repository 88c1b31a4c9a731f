"""Iterative group decoder: refines all flows of a frame group jointly.

Per iteration, each frame pair's flow and correlation lookup feed a motion
encoder; one shared temporal context is computed from all pairs' motion
features (a single call per iteration); spatial cross-attention aggregates
per-pair evidence; and a conv-gated recurrent unit emits a residual flow
update plus a convex-upsampling mask. The temporal branch's final projection
is zero-initialized so that, at initialization, frame pairs cannot influence
each other.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .correlation import build_pyramid, build_volume, corr_feature_channels, lookup
from .encoder import attention


class LargeKernelConv(nn.Module):
    """Pointwise projection followed by a depthwise large-kernel conv.

    The projection runs first so the expensive spatial filter acts on the
    narrow output width rather than on wide concatenated inputs.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 7):
        super().__init__()
        self.pw = nn.Conv2d(in_ch, out_ch, 1)
        self.dw = nn.Conv2d(out_ch, out_ch, kernel, padding=kernel // 2, groups=out_ch)

    def forward(self, x):
        return self.dw(self.pw(x))


class MotionEncoder(nn.Module):
    """Flow + correlation features -> motion feature (last 2 channels carry the raw flow)."""

    def __init__(self, corr_channels: int, motion_dim: int = 128, kernel: int = 7):
        super().__init__()
        c1 = max(64, 3 * motion_dim // 2)
        f1 = max(32, 3 * motion_dim // 4)
        f2 = max(16, 3 * motion_dim // 8)
        self.convc1 = nn.Conv2d(corr_channels, c1, 1)
        self.convc2 = LargeKernelConv(c1, motion_dim, kernel)
        self.convf1 = nn.Conv2d(2, f1, 7, padding=3)
        self.convf2 = nn.Conv2d(f1, f2, 3, padding=1)
        self.conv = LargeKernelConv(motion_dim + f2, motion_dim - 2, kernel)

    def forward(self, flow: torch.Tensor, corr: torch.Tensor) -> torch.Tensor:
        if flow.shape[-2:] != corr.shape[-2:]:
            raise ValueError(
                f"flow {tuple(flow.shape[-2:])} and correlation {tuple(corr.shape[-2:])} grids differ"
            )
        c = F.gelu(self.convc1(corr))
        c = F.gelu(self.convc2(c))
        f = F.gelu(self.convf1(flow))
        f = F.gelu(self.convf2(f))
        out = F.gelu(self.conv(torch.cat([c, f], dim=1)))
        return torch.cat([out, flow], dim=1)


class TemporalContextLayer(nn.Module):
    """One shared context per iteration from every pair's motion feature.

    Attention runs across the pair axis independently at each spatial position,
    followed by a feed-forward sublayer; the mean over pairs is then projected
    by a zero-initialized layer, so the context starts exactly at zero and the
    downstream contribution at initialization is nil for any input.
    """

    def __init__(self, motion_dim: int, out_dim: int, heads: int = 1,
                 mlp_ratio: float = 2.0, zero_init: bool = True):
        super().__init__()
        if motion_dim % heads:
            raise ValueError(f"motion_dim {motion_dim} not divisible by heads {heads}")
        self.heads = heads
        self.norm1 = nn.LayerNorm(motion_dim)
        self.qkv = nn.Linear(motion_dim, 3 * motion_dim)
        self.proj = nn.Linear(motion_dim, motion_dim)
        self.norm2 = nn.LayerNorm(motion_dim)
        hidden = int(motion_dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(motion_dim, hidden), nn.GELU(),
                                 nn.Linear(hidden, motion_dim))
        self.out = nn.Linear(motion_dim, out_dim)
        if zero_init:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)
        self.call_count = 0

    def forward(self, motions: torch.Tensor) -> torch.Tensor:
        """motions: (B, P, C, H, W) -> shared context (B, out_dim, H, W)."""
        if motions.dim() != 5:
            raise ValueError(f"expected (B, P, C, H, W), got {tuple(motions.shape)}")
        b, p, c, h, w = motions.shape
        if p < 1:
            raise ValueError("temporal layer needs at least one motion feature")
        self.call_count += 1
        x = motions.permute(0, 3, 4, 1, 2).reshape(b * h * w, p, c)
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        hd = self.heads
        q = q.reshape(-1, p, hd, c // hd).transpose(1, 2)
        k = k.reshape(-1, p, hd, c // hd).transpose(1, 2)
        v = v.reshape(-1, p, hd, c // hd).transpose(1, 2)
        y = attention(q, k, v).transpose(1, 2).reshape(-1, p, c)
        x = x + self.proj(y)
        x = x + self.mlp(self.norm2(x))
        shared = self.out(x.mean(dim=1))  # (B*H*W, out_dim)
        return shared.reshape(b, h, w, -1).permute(0, 3, 1, 2).contiguous()


class SpatialCrossAttention(nn.Module):
    """Queries/keys from the frame feature map, values from the motion feature."""

    def __init__(self, feat_dim: int, motion_dim: int, out_dim: int, heads: int = 1):
        super().__init__()
        if feat_dim % heads or out_dim % heads:
            raise ValueError("dims must divide by heads")
        self.heads = heads
        self.to_q = nn.Conv2d(feat_dim, feat_dim, 1)
        self.to_k = nn.Conv2d(feat_dim, feat_dim, 1)
        self.to_v = nn.Conv2d(motion_dim, out_dim, 1)

    def forward(self, motion: torch.Tensor, feat: torch.Tensor) -> torch.Tensor:
        if motion.shape[-2:] != feat.shape[-2:]:
            raise ValueError("motion and feature grids differ")
        b, _, h, w = feat.shape
        hd = self.heads
        q = self.to_q(feat).flatten(2).transpose(1, 2)   # (B, HW, feat_dim)
        k = self.to_k(feat).flatten(2).transpose(1, 2)
        v = self.to_v(motion).flatten(2).transpose(1, 2)  # (B, HW, out_dim)
        n = h * w
        q = q.reshape(b, n, hd, -1).transpose(1, 2)
        k = k.reshape(b, n, hd, -1).transpose(1, 2)
        v = v.reshape(b, n, hd, -1).transpose(1, 2)
        s = attention(q, k, v).transpose(1, 2).reshape(b, n, -1)
        return s.transpose(1, 2).reshape(b, -1, h, w)


def aggregate(temporal: torch.Tensor, spatial: torch.Tensor) -> torch.Tensor:
    """Channel-concatenate the shared temporal context (first) with the spatial feature."""
    if temporal.shape[-2:] != spatial.shape[-2:]:
        raise ValueError("temporal and spatial grids differ")
    return torch.cat([temporal, spatial], dim=1)


class MotionUpdater(nn.Module):
    """Conv-gated recurrent update emitting a refreshed motion feature, a
    residual flow, and upsampling-mask logits. The hidden state stays in
    (-1, 1) because the update is a convex mix of the old state and a tanh."""

    def __init__(self, motion_dim: int, agg_dim: int, ctx_dim: int, hidden_dim: int,
                 kernel: int = 7, up_factor: int = 8):
        super().__init__()
        in_dim = motion_dim + agg_dim + ctx_dim
        self.conv_zr = LargeKernelConv(hidden_dim + in_dim, 2 * hidden_dim, kernel)
        self.convq = LargeKernelConv(hidden_dim + in_dim, hidden_dim, kernel)
        self.motion_head = LargeKernelConv(hidden_dim + motion_dim, motion_dim, kernel)
        self.flow_head = nn.Sequential(
            nn.Conv2d(motion_dim, max(32, motion_dim // 2), 3, padding=1), nn.GELU(),
            nn.Conv2d(max(32, motion_dim // 2), 2, 3, padding=1),
        )
        self.mask_head = nn.Sequential(
            nn.Conv2d(hidden_dim, max(64, 2 * hidden_dim), 3, padding=1), nn.GELU(),
            nn.Conv2d(max(64, 2 * hidden_dim), 9 * up_factor * up_factor, 1),
        )

    def forward(self, motion, agg, hidden, static_ctx):
        shapes = {tuple(t.shape[-2:]) for t in (motion, agg, hidden, static_ctx)}
        if len(shapes) != 1:
            raise ValueError(f"updater inputs disagree on grid shape: {shapes}")
        x = torch.cat([motion, agg, static_ctx], dim=1)
        hx = torch.cat([hidden, x], dim=1)
        z, r = torch.sigmoid(self.conv_zr(hx)).chunk(2, dim=1)
        q = torch.tanh(self.convq(torch.cat([r * hidden, x], dim=1)))
        new_hidden = (1 - z) * hidden + z * q
        motion_out = F.gelu(self.motion_head(torch.cat([new_hidden, motion], dim=1)))
        dflow = self.flow_head(motion_out)
        mask = 0.25 * self.mask_head(new_hidden)
        return new_hidden, motion_out, dflow, mask


def update_flow(flow_prev: torch.Tensor, dflow: torch.Tensor) -> torch.Tensor:
    """Residual flow update: elementwise sum."""
    if flow_prev.shape != dflow.shape:
        raise ValueError(f"flow shapes differ: {tuple(flow_prev.shape)} vs {tuple(dflow.shape)}")
    return flow_prev + dflow


def upsample_flow(flow: torch.Tensor, mask: torch.Tensor, factor: int = 8) -> torch.Tensor:
    """Convex upsampling: each fine pixel mixes its 3x3 coarse neighbors, scaled by factor.

    flow: (B, 2, H, W); mask: (B, 9*factor^2, H, W) logits, softmaxed over the
    9 neighbor weights. Returns (B, 2, factor*H, factor*W).
    """
    b, _, h, w = flow.shape
    weights = mask.reshape(b, 1, 9, factor, factor, h, w).softmax(dim=2)
    padded = F.pad(factor * flow, (1, 1, 1, 1), mode="replicate")
    neighbors = F.unfold(padded, 3)  # (B, 2*9, H*W)
    neighbors = neighbors.reshape(b, 2, 9, 1, 1, h, w)
    up = (weights * neighbors).sum(dim=2)  # (B, 2, factor, factor, H, W)
    up = up.permute(0, 1, 4, 2, 5, 3)      # (B, 2, H, factor, W, factor)
    return up.reshape(b, 2, factor * h, factor * w)


class GroupDecoder(nn.Module):
    """Joint iterative refinement of the T-1 flows of one frame group."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        corr_ch = corr_feature_channels(cfg.corr_levels, cfg.corr_radius)
        self.motion_encoder = MotionEncoder(corr_ch, cfg.motion_dim, cfg.gru_kernel)
        spatial_dim = cfg.spatial_dim + cfg.widen_dim
        self.cross_attn = SpatialCrossAttention(cfg.feat_dim, cfg.motion_dim, spatial_dim)
        if cfg.use_temporal:
            self.temporal = TemporalContextLayer(
                cfg.motion_dim, cfg.temporal_dim, zero_init=cfg.zero_init_temporal
            )
            agg_dim = cfg.temporal_dim + spatial_dim
        else:
            self.temporal = None
            agg_dim = spatial_dim
        self.updater = MotionUpdater(
            cfg.motion_dim, agg_dim, cfg.ctx_input_dim, cfg.ctx_hidden_dim, cfg.gru_kernel
        )

    def build_pair_pyramids(self, feats: torch.Tensor):
        """feats: (B, T, C, H, W) -> pyramid per adjacent pair, dot products scaled by 1/sqrt(C).

        With cfg.normalize_corr_feats, each frame's map is standardized per
        channel first, which centers the volume and sharpens match contrast.
        """
        b, t, c, h, w = feats.shape
        if self.cfg.normalize_corr_feats:
            mean = feats.mean(dim=(-2, -1), keepdim=True)
            var = feats.var(dim=(-2, -1), keepdim=True, unbiased=False)
            feats = (feats - mean) / torch.sqrt(var + 1e-6)
        scale = 1.0 / math.sqrt(c)
        pyramids = []
        for k in range(t - 1):
            vol = build_volume(feats[:, k], feats[:, k + 1]) * scale
            pyr = build_pyramid(vol, self.cfg.corr_levels)
            if pyr.num_levels != self.cfg.corr_levels:
                raise ValueError(
                    f"coarse grid {h}x{w} supports only {pyr.num_levels} pyramid levels; "
                    f"configure corr_levels={pyr.num_levels} or use larger frames"
                )
            pyramids.append(pyr)
        return pyramids

    def refine(self, feats, hidden0, static_ctx, pyramids, iterations, ledger=None):
        """Run `iterations` joint updates from zero flow.

        feats: (B, T, C, H, W); hidden0/static_ctx: (B, T-1, ., H, W) for the
        source frame of each pair; pyramids: list of T-1 correlation pyramids.
        Returns (flows_per_iter, masks_per_iter): each a list over iterations
        of (B, T-1, 2, H, W) / (B, T-1, 9*64, H, W).
        """
        if iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {iterations}")
        b, t, _, h, w = feats.shape
        pairs = t - 1
        if len(pyramids) != pairs:
            raise ValueError(f"expected {pairs} pyramids, got {len(pyramids)}")
        if hidden0.shape[1] != pairs or static_ctx.shape[1] != pairs:
            raise ValueError("context states must cover each frame pair's source frame")

        flow = feats.new_zeros(b * pairs, 2, h, w)
        hidden = hidden0.reshape(b * pairs, -1, h, w)
        ctx = static_ctx.reshape(b * pairs, -1, h, w)
        pair_feats = feats[:, :-1].reshape(b * pairs, -1, h, w)

        flows_per_iter, masks_per_iter = [], []
        for _ in range(iterations):
            corr = torch.cat(
                [lookup(pyramids[k], flow.reshape(b, pairs, 2, h, w)[:, k], self.cfg.corr_radius)
                 for k in range(pairs)], dim=0)
            # lookup returns pair-major blocks of size b; reorder to (b*pairs) batch-major
            corr = corr.reshape(pairs, b, -1, h, w).transpose(0, 1).reshape(b * pairs, -1, h, w)
            motion = self.motion_encoder(flow, corr)
            spatial = self.cross_attn(motion, pair_feats)
            if self.temporal is not None:
                shared = self.temporal(motion.reshape(b, pairs, -1, h, w))
                if ledger is not None:
                    ledger.temporal_layer_calls += 1
                shared = shared.unsqueeze(1).expand(b, pairs, -1, h, w)
                agg = aggregate(shared.reshape(b * pairs, -1, h, w), spatial)
            else:
                agg = spatial
            hidden, _, dflow, mask = self.updater(motion, agg, hidden, ctx)
            flow = update_flow(flow, dflow)
            if ledger is not None:
                ledger.decoder_iterations += 1
            flows_per_iter.append(flow.reshape(b, pairs, 2, h, w))
            masks_per_iter.append(mask.reshape(b, pairs, -1, h, w))
        return flows_per_iter, masks_per_iter
