"""Auxiliary branch: conv front end + masked group-wise temporal self-attention.

Attention is causal with a bounded past window, and loss-aware: query, key
and value rows at lost frames are zeroed and lost keys are excluded from the
attention map entirely.  A lost query therefore attends uniformly over the
visible non-lost keys, i.e. its output is their arithmetic mean; with no
visible non-lost key the output row is zero.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .config import AttentionConfig
from .dsp import NUM_BINS, ShapeError
from .layers import CausalConv2d, ChannelLayerNorm, StreamState
from .semantic import fold_frequency


def masked_attention(
    queries: torch.Tensor,
    keys: torch.Tensor,
    values: torch.Tensor,
    lossmap: torch.Tensor,
    window: int,
    key_lossmap: torch.Tensor | None = None,
    query_offset: int = 0,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Loss-masked, past-windowed scaled dot-product attention.

    queries: (..., T, d) for frames query_offset .. query_offset+T-1;
    keys/values: (..., S, d) for frames 0 .. S-1 on the same timeline.
    lossmap marks lost query frames, key_lossmap (default: lossmap) lost key
    frames.  Query frame t may attend to non-lost keys in [t - window, t].

    Returns (output (..., T, d), weights (..., T, S)).  Weight rows are
    probability distributions over the visible non-lost keys, all-zero when
    that set is empty.
    """
    t, d = queries.shape[-2], queries.shape[-1]
    s = keys.shape[-2]
    if values.shape[-2] != s:
        raise ShapeError("keys and values must cover the same frames")
    if lossmap.shape[-1] != t:
        raise ShapeError(f"lossmap covers {lossmap.shape[-1]} frames, queries {t}")
    key_lossmap = lossmap if key_lossmap is None else key_lossmap
    if key_lossmap.shape[-1] != s:
        raise ShapeError(f"key lossmap covers {key_lossmap.shape[-1]} frames, keys {s}")

    q_lost = lossmap.bool()
    k_lost = key_lossmap.bool()
    q = queries.masked_fill(q_lost[..., :, None], 0.0)
    k = keys.masked_fill(k_lost[..., :, None], 0.0)
    v = values.masked_fill(k_lost[..., :, None], 0.0)

    logits = q @ k.transpose(-2, -1) / math.sqrt(d)
    q_frames = torch.arange(query_offset, query_offset + t, device=queries.device)
    k_frames = torch.arange(s, device=queries.device)
    in_window = (k_frames[None, :] <= q_frames[:, None]) & (
        k_frames[None, :] >= q_frames[:, None] - window
    )
    allowed = in_window & ~k_lost[..., None, :]
    logits = logits.masked_fill(~allowed, float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    weights = torch.nan_to_num(weights, nan=0.0)  # rows with no visible key
    return weights @ v, weights


class GTSABlock(nn.Module):
    """One group-wise temporal self-attention block with a residual path."""

    def __init__(self, channels: int, groups: int, window: int):
        super().__init__()
        if channels % groups:
            raise ShapeError(f"{channels} channels do not split into {groups} groups")
        self.groups = groups
        self.head_dim = channels // groups
        self.window = window
        self.norm = ChannelLayerNorm(channels)
        self.q_proj = nn.Conv1d(channels, channels, 1, groups=groups)
        self.k_proj = nn.Conv1d(channels, channels, 1, groups=groups)
        self.v_proj = nn.Conv1d(channels, channels, 1, groups=groups)
        self.out_proj = nn.Conv1d(channels, channels, 1)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (B, C, T) -> (B, G, T, d)
        b, c, t = x.shape
        return x.reshape(b, self.groups, self.head_dim, t).transpose(2, 3)

    def _merge(self, x: torch.Tensor) -> torch.Tensor:
        b, g, t, d = x.shape
        return x.transpose(2, 3).reshape(b, g * d, t)

    def forward(self, x: torch.Tensor, lossmap: torch.Tensor,
                state: StreamState | None = None) -> torch.Tensor:
        y = self.norm(x)
        q = self._split(self.q_proj(y))
        k = self._split(self.k_proj(y))
        v = self._split(self.v_proj(y))
        lm = lossmap[:, None, :]

        if state is None:
            out, _ = masked_attention(q, k, v, lm, self.window)
        else:
            cached = state.get(self)
            if cached is not None:
                ck, cv, clm = cached
                k_all = torch.cat([ck, k], dim=2)
                v_all = torch.cat([cv, v], dim=2)
                lm_all = torch.cat([clm, lm], dim=2)
            else:
                k_all, v_all, lm_all = k, v, lm
            offset = k_all.shape[2] - q.shape[2]
            out, _ = masked_attention(q, k_all, v_all, lm, self.window,
                                      key_lossmap=lm_all, query_offset=offset)
            keep = min(self.window, k_all.shape[2])
            state[self] = (
                k_all[:, :, -keep:].detach(),
                v_all[:, :, -keep:].detach(),
                lm_all[:, :, -keep:].detach(),
            )
        return x + self.out_proj(self._merge(out))


class AuxiliaryEncoder(nn.Module):
    """Causal conv front block, frequency flattening, stacked G-TSA blocks."""

    def __init__(self, cfg: AttentionConfig | None = None, num_bins: int = NUM_BINS):
        super().__init__()
        cfg = cfg or AttentionConfig()
        self.cfg = cfg
        self.num_bins = num_bins
        self.front = CausalConv2d(2, cfg.front_channels, (2, 5))
        self.front_act = nn.PReLU()
        self.flatten = nn.Conv1d(cfg.front_channels * num_bins, cfg.channels, 1)
        self.blocks = nn.ModuleList(
            GTSABlock(cfg.channels, cfg.groups, cfg.window) for _ in range(cfg.blocks)
        )

    def forward(self, cspec: torch.Tensor, lossmap: torch.Tensor,
                state: StreamState | None = None) -> torch.Tensor:
        # cspec: (B, 2, T, F), lossmap: (B, T) -> (B, C_A, T)
        if cspec.ndim != 4 or cspec.shape[1] != 2 or cspec.shape[3] != self.num_bins:
            raise ShapeError(f"expected (B, 2, T, {self.num_bins}) input, got {tuple(cspec.shape)}")
        if lossmap.shape != cspec.shape[:1] + cspec.shape[2:3]:
            raise ShapeError("loss map does not match spectrogram frames")
        x = self.front_act(self.front(cspec, state))
        x = self.flatten(fold_frequency(x))
        lossmap = lossmap.to(x.dtype)
        for block in self.blocks:
            x = block(x, lossmap, state)
        return x
