"""Full multi-frame flow network: two shared-architecture encoders plus the
joint group decoder, with a staged API so a pipeline can cache the frame-local
encoding stage per frame."""

from typing import NamedTuple

import torch
import torch.nn as nn

from .config import ModelConfig
from .decoder import GroupDecoder, upsample_flow
from .encoder import ContextState, FrameEncoder


class FrameTokens(NamedTuple):
    """Frame-local encoder stage output, cacheable per frame index."""
    feat: torch.Tensor  # (B, N, C) positioned correlation-feature tokens
    ctx: torch.Tensor   # (B, N, C) positioned context tokens
    grid_hw: tuple      # (H/8, W/8)


class MultiFrameFlowNet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        self.fnet = FrameEncoder(
            cfg.feat_dim, cfg.enc_embed_dim, cfg.enc_blocks, cfg.enc_heads,
            cross_frame=cfg.cross_frame_attn, window=cfg.attn_window,
        )
        self.cnet = FrameEncoder(
            cfg.ctx_hidden_dim + cfg.ctx_input_dim, cfg.enc_embed_dim, cfg.enc_blocks,
            cfg.enc_heads, cross_frame=cfg.cross_frame_attn and cfg.cross_frame_in_context,
            window=cfg.attn_window, split=(cfg.ctx_hidden_dim, cfg.ctx_input_dim),
        )
        self.decoder = GroupDecoder(cfg)

    def embed_frame(self, frame: torch.Tensor) -> FrameTokens:
        """Frame-local stage for one frame (B, 3, H, W); independent of the group."""
        return FrameTokens(
            self.fnet.embed_frame(frame),
            self.cnet.embed_frame(frame),
            (frame.shape[-2] // 8, frame.shape[-1] // 8),
        )

    def encode_group(self, tokens: list) -> tuple:
        """Group stage over T frame-token sets -> (feats (B,T,C,H,W), ContextState)."""
        grid_hw = tokens[0].grid_hw
        feat_tok = torch.stack([t.feat for t in tokens], dim=1)
        ctx_tok = torch.stack([t.ctx for t in tokens], dim=1)
        feats = self.fnet.project(self.fnet.forward_tokens(feat_tok, grid_hw), grid_hw)
        hidden, context = self.cnet.project(self.cnet.forward_tokens(ctx_tok, grid_hw), grid_hw)
        return feats, ContextState(hidden, context)

    def encode_features(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, T, 3, H, W) -> correlation features (B, T, C, H/8, W/8)."""
        return self.fnet(frames)

    def encode_context(self, frames: torch.Tensor) -> ContextState:
        """(B, T, 3, H, W) -> per-frame hidden/context states."""
        hidden, context = self.cnet(frames)
        return ContextState(hidden, context)

    def forward(self, frames: torch.Tensor, iterations: int | None = None, ledger=None):
        """Estimate all T-1 flows of each group in the batch.

        frames: (B, T, 3, H, W) in [0, 1]. Returns a dict with:
          flows:  per-iteration full-resolution flows, each (B, T-1, 2, H, W)
          coarse: per-iteration 1/8-resolution flows
        """
        if frames.dim() != 5:
            raise ValueError(f"expected (B, T, 3, H, W), got {tuple(frames.shape)}")
        if frames.shape[1] < 2:
            raise ValueError("a group needs at least 2 frames")
        b, t = frames.shape[:2]
        tokens = [
            FrameTokens(ft, ct, (frames.shape[-2] // 8, frames.shape[-1] // 8))
            for ft, ct in zip(
                self.fnet.embed_frame(frames.reshape(b * t, *frames.shape[2:]))
                    .reshape(b, t, -1, self.cfg.enc_embed_dim).unbind(1),
                self.cnet.embed_frame(frames.reshape(b * t, *frames.shape[2:]))
                    .reshape(b, t, -1, self.cfg.enc_embed_dim).unbind(1),
            )
        ]
        return self.decode_group(*self.encode_group(tokens), iterations, ledger)

    def decode_group(self, feats, state: ContextState, iterations=None, ledger=None):
        iterations = iterations or self.cfg.iterations
        pyramids = self.decoder.build_pair_pyramids(feats)
        if ledger is not None:
            ledger.volume_builds += len(pyramids)
        coarse, masks = self.decoder.refine(
            feats, state.hidden[:, :-1], state.context[:, :-1], pyramids, iterations, ledger
        )
        b, pairs = coarse[0].shape[:2]
        h, w = coarse[0].shape[-2:]
        flows = [
            upsample_flow(c.reshape(b * pairs, 2, h, w), m.reshape(b * pairs, -1, h, w))
            .reshape(b, pairs, 2, 8 * h, 8 * w)
            for c, m in zip(coarse, masks)
        ]
        return {"flows": flows, "coarse": coarse}

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
