"""Frame encoders at 1/8 resolution with cross-frame token integration.

Each frame is patch-embedded by a small conv stem, given per-frame positional
encodings (identical across frames, so integration adds no parameters), and
processed by shared self-attention blocks. With cross-frame integration on,
the blocks attend over the concatenation of every frame's tokens; with it off,
the same blocks run on each frame separately. Parameter count is independent
of the number of frames either way.
"""

import math
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F


class ContextState(NamedTuple):
    hidden: torch.Tensor   # (B, C_h, H/8, W/8), entries in (-1, 1)
    context: torch.Tensor  # (B, C_c, H/8, W/8), entries >= 0


def attention(queries: torch.Tensor, keys: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
    """Scaled dot-product attention: softmax(q k^T / sqrt(d)) v.

    queries: (..., Nq, d); keys/values: (..., Nk, d/dv). Every output row is a
    convex combination of value rows.
    """
    d = queries.shape[-1]
    if d == 0:
        raise ValueError("attention head dim must be > 0")
    if queries.shape[-2] == 0 or keys.shape[-2] == 0:
        raise ValueError("attention over an empty token set")
    scores = queries @ keys.transpose(-2, -1) / math.sqrt(d)
    return torch.softmax(scores, dim=-1) @ values


def attention_weights(queries: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
    """The softmax attention matrix alone; rows sum to 1."""
    d = queries.shape[-1]
    if d == 0:
        raise ValueError("attention head dim must be > 0")
    scores = queries @ keys.transpose(-2, -1) / math.sqrt(d)
    return torch.softmax(scores, dim=-1)


def integrate(grids) -> torch.Tensor:
    """Concatenate per-frame token grids along the token dimension, frame-major.

    grids: sequence of (B, N, C) tensors ordered by frame index. Values are not
    modified; slicing the result by frame recovers each grid exactly.
    """
    grids = list(grids)
    if not grids:
        raise ValueError("integrate needs at least one token grid")
    first = grids[0].shape
    for g in grids:
        if g.dim() != 3 or g.shape != first:
            raise ValueError(
                f"token grids must share shape, got {[tuple(g.shape) for g in grids]}"
            )
    if len(grids) == 1:
        return grids[0]
    return torch.cat(grids, dim=1)


def position_encoding(h: int, w: int, dim: int, device=None, dtype=torch.float32) -> torch.Tensor:
    """2D sinusoidal encoding, (h*w, dim). dim must divide by 4."""
    if dim % 4:
        raise ValueError(f"position encoding dim must divide by 4, got {dim}")
    quarter = dim // 4
    freq = torch.exp(
        -math.log(10000.0) * torch.arange(quarter, device=device, dtype=dtype) / quarter
    )
    ys = torch.arange(h, device=device, dtype=dtype)[:, None] * freq[None, :]
    xs = torch.arange(w, device=device, dtype=dtype)[:, None] * freq[None, :]
    pe_y = torch.cat([torch.sin(ys), torch.cos(ys)], dim=1)  # (h, dim/2)
    pe_x = torch.cat([torch.sin(xs), torch.cos(xs)], dim=1)  # (w, dim/2)
    grid = torch.cat(
        [pe_y[:, None, :].expand(h, w, -1), pe_x[None, :, :].expand(h, w, -1)], dim=2
    )
    return grid.reshape(h * w, dim)


class SelfAttentionBlock(nn.Module):
    """Pre-norm residual block: x <- x + proj(attn(x)), then a feed-forward sublayer.

    The block is token-set agnostic; integration across frames happens in the
    caller, so no frame-count-specific weights exist. Positional encodings
    enter the queries and keys only (through the same projection, adding no
    parameters), keeping the value/content stream position-free so downstream
    correlation volumes compare content rather than coordinates.
    """

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 2.0):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, tokens: torch.Tensor, pos: torch.Tensor | None = None) -> torch.Tensor:
        b, n, c = tokens.shape
        h = self.heads
        q, k, v = self.qkv(self.norm1(tokens)).chunk(3, dim=-1)
        if pos is not None:
            q = q + F.linear(pos, self.qkv.weight[:c])
            k = k + F.linear(pos, self.qkv.weight[c:2 * c])
        q = q.reshape(b, n, h, c // h).transpose(1, 2)
        k = k.reshape(b, n, h, c // h).transpose(1, 2)
        v = v.reshape(b, n, h, c // h).transpose(1, 2)
        y = attention(q, k, v).transpose(1, 2).reshape(b, n, c)
        x = tokens + self.proj(y)
        return x + self.mlp(self.norm2(x))


class PatchEmbed(nn.Module):
    """Conv stem to stride 8."""

    def __init__(self, dim: int, in_channels: int = 3):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, 48, 3, stride=2, padding=1),
            nn.GroupNorm(8, 48),
            nn.GELU(),
            nn.Conv2d(48, 96, 3, stride=2, padding=1),
            nn.GroupNorm(8, 96),
            nn.GELU(),
            nn.Conv2d(96, dim, 3, stride=2, padding=1),
        )

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.net(frames)


class FrameEncoder(nn.Module):
    """Shared-architecture encoder producing per-frame maps at 1/8 resolution.

    split=None gives a plain feature map of out_dim channels. split=(ch, cc)
    gives a ContextState: tanh-bounded hidden (ch channels) and non-negative
    static context (cc channels).
    """

    def __init__(self, out_dim: int, embed_dim: int = 128, blocks: int = 4, heads: int = 4,
                 cross_frame: bool = True, window: int = 0, split=None):
        super().__init__()
        self.cross_frame = cross_frame
        self.window = window
        self.split = split
        self.stem = PatchEmbed(embed_dim)
        self.blocks = nn.ModuleList(SelfAttentionBlock(embed_dim, heads) for _ in range(blocks))
        self.norm = nn.LayerNorm(embed_dim)
        self.head = nn.Linear(embed_dim, out_dim)

    def embed_frame(self, frame: torch.Tensor) -> torch.Tensor:
        """Frame-local stage: (B, 3, H, W) -> content tokens (B, H/8*W/8, C)."""
        if frame.shape[-2] % 8 or frame.shape[-1] % 8:
            raise ValueError(f"frame dims must divide by 8, got {tuple(frame.shape[-2:])}")
        fmap = self.stem(frame)
        tokens = fmap.flatten(2).transpose(1, 2)
        return tokens

    def _window_partition(self, tokens, t, h8, w8):
        win = self.window
        if h8 % win or w8 % win:
            raise ValueError(f"grid {h8}x{w8} not divisible by window {win}")
        b = tokens.shape[0]
        c = tokens.shape[-1]
        x = tokens.reshape(b, t, h8 // win, win, w8 // win, win, c)
        x = x.permute(0, 2, 4, 1, 3, 5, 6)  # (B, nh, nw, T, win, win, C)
        return x.reshape(b * (h8 // win) * (w8 // win), t * win * win, c)

    def _window_merge(self, x, b, t, h8, w8):
        win = self.window
        c = x.shape[-1]
        x = x.reshape(b, h8 // win, w8 // win, t, win, win, c)
        x = x.permute(0, 3, 1, 4, 2, 5, 6)
        return x.reshape(b, t, h8 * w8, c)

    def forward_tokens(self, tokens: torch.Tensor, grid_hw) -> torch.Tensor:
        """Attention stage over a frame group: (B, T, N, C) -> (B, T, N, C).

        The positional encoding is identical for every frame, so it is built
        once and routed through the same arrangement as the tokens.
        """
        b, t, n, c = tokens.shape
        h8, w8 = grid_hw
        pos_frame = position_encoding(h8, w8, c, device=tokens.device, dtype=tokens.dtype)
        if self.cross_frame:
            if self.window:
                x = self._window_partition(tokens, t, h8, w8)
                pos = self._window_partition(pos_frame.expand(1, t, n, c), t, h8, w8)
                pos = pos.repeat(b, 1, 1)  # windows cycle fastest in the batch dim
            else:
                x = integrate([tokens[:, i] for i in range(t)])
                pos = pos_frame.repeat(t, 1)
        else:
            if self.window:
                x = self._window_partition(tokens.reshape(b * t, 1, n, c), 1, h8, w8)
                pos = self._window_partition(pos_frame.expand(1, 1, n, c), 1, h8, w8)
                pos = pos.repeat(b * t, 1, 1)
            else:
                x = tokens.reshape(b * t, n, c)
                pos = pos_frame
        for block in self.blocks:
            x = block(x, pos)
        if self.cross_frame:
            if self.window:
                return self._window_merge(x, b, t, h8, w8)
            return x.reshape(b, t, n, c)
        if self.window:
            return self._window_merge(x, b * t, 1, h8, w8).reshape(b, t, n, c)
        return x.reshape(b, t, n, c)

    def project(self, tokens: torch.Tensor, grid_hw):
        """Head stage: tokens (B, T, N, C) -> per-frame maps at 1/8 resolution."""
        b, t, n, _ = tokens.shape
        h8, w8 = grid_hw
        out = self.head(self.norm(tokens))  # (B, T, N, out_dim)
        out = out.permute(0, 1, 3, 2).reshape(b, t, -1, h8, w8)
        if self.split is None:
            return out
        ch, cc = self.split
        hidden = torch.tanh(out[:, :, :ch])
        context = F.softplus(out[:, :, ch:ch + cc])
        return hidden, context

    def forward(self, frames: torch.Tensor):
        """(B, T, 3, H, W) -> feature maps (B, T, out, H/8, W/8) or split states."""
        b, t, c, h, w = frames.shape
        tokens = self.embed_frame(frames.reshape(b * t, c, h, w))
        tokens = tokens.reshape(b, t, tokens.shape[1], tokens.shape[2])
        tokens = self.forward_tokens(tokens, (h // 8, w // 8))
        return self.project(tokens, (h // 8, w // 8))
