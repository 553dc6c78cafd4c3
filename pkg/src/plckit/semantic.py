"""Semantic branch: causal 2-D feature extractor + dilated TCM aggregator.

The extractor consumes the compressed spectrogram with the frame loss map
appended as an extra input channel, strides the frequency axis down to a
handful of bins, and the frequency axis is then folded into channels before
a stack of dilated causal temporal convolution modules builds long past
context at frame rate.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .config import EncoderConfig
from .dsp import NUM_BINS, ShapeError
from .layers import CausalConv1d, CausalConv2d, ChannelLayerNorm, StreamState


def fold_frequency(x: torch.Tensor) -> torch.Tensor:
    """(B, C, T, F) -> (B, C*F, T), channel-major: out[:, c*F + f, t] = x[:, c, t, f]."""
    b, c, t, f = x.shape
    return x.permute(0, 1, 3, 2).reshape(b, c * f, t)


def unfold_frequency(x: torch.Tensor, channels: int) -> torch.Tensor:
    """Inverse of :func:`fold_frequency` for a known channel count."""
    b, cf, t = x.shape
    if cf % channels:
        raise ShapeError(f"{cf} folded channels do not split into {channels}")
    f = cf // channels
    return x.reshape(b, channels, f, t).permute(0, 1, 3, 2)


def conv_stack_bins(num_bins: int, freq_strides: tuple[int, ...]) -> int:
    """Frequency bins after the extractor stack (ceil division per stride)."""
    f = num_bins
    for s in freq_strides:
        f = math.ceil(f / s)
    return f


class FeatureExtractor(nn.Module):
    """Four causal 2-D conv layers; loss map enters as a third input channel."""

    def __init__(self, cfg: EncoderConfig, num_bins: int = NUM_BINS):
        super().__init__()
        self.num_bins = num_bins
        channels = (3,) + tuple(cfg.conv_channels)
        self.convs = nn.ModuleList(
            CausalConv2d(channels[i], channels[i + 1], cfg.conv_kernel,
                         freq_stride=cfg.freq_strides[i])
            for i in range(len(cfg.freq_strides))
        )
        self.acts = nn.ModuleList(nn.PReLU() for _ in cfg.freq_strides)
        self.out_bins = conv_stack_bins(num_bins, cfg.freq_strides)

    def forward(self, cspec: torch.Tensor, lossmap: torch.Tensor,
                state: StreamState | None = None) -> torch.Tensor:
        # cspec: (B, 2, T, F), lossmap: (B, T) -> (B, C_E, T, F_out)
        if cspec.ndim != 4 or cspec.shape[1] != 2 or cspec.shape[3] != self.num_bins:
            raise ShapeError(f"expected (B, 2, T, {self.num_bins}) input, got {tuple(cspec.shape)}")
        if lossmap.shape != cspec.shape[:1] + cspec.shape[2:3]:
            raise ShapeError(
                f"loss map shape {tuple(lossmap.shape)} does not match "
                f"{cspec.shape[0]} x {cspec.shape[2]} frames"
            )
        loss_channel = lossmap.to(cspec.dtype)[:, None, :, None].expand(
            -1, 1, -1, cspec.shape[3])
        x = torch.cat([cspec, loss_channel], dim=1)
        for conv, act in zip(self.convs, self.acts):
            x = act(conv(x, state))
        return x


class TCMUnit(nn.Module):
    """Depthwise-bottleneck dilated causal conv with a residual path."""

    def __init__(self, channels: int, hidden: int, kernel: int, dilation: int):
        super().__init__()
        self.expand = nn.Conv1d(channels, hidden, 1)
        self.act1 = nn.PReLU()
        self.norm1 = ChannelLayerNorm(hidden)
        self.dconv = CausalConv1d(hidden, hidden, kernel, dilation=dilation, groups=hidden)
        self.act2 = nn.PReLU()
        self.norm2 = ChannelLayerNorm(hidden)
        self.project = nn.Conv1d(hidden, channels, 1)

    def forward(self, x: torch.Tensor, state: StreamState | None = None) -> torch.Tensor:
        y = self.norm1(self.act1(self.expand(x)))
        y = self.norm2(self.act2(self.dconv(y, state)))
        return x + self.project(y)


class ContextAggregator(nn.Module):
    """Repeated blocks of TCM units with exponentially growing dilations."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.units = nn.ModuleList(
            TCMUnit(cfg.semantic_channels, cfg.tcm_hidden, cfg.tcm_kernel, d)
            for _ in range(cfg.tcm_blocks)
            for d in cfg.tcm_dilations
        )
        self.receptive_field = 1 + sum(
            (cfg.tcm_kernel - 1) * d
            for _ in range(cfg.tcm_blocks)
            for d in cfg.tcm_dilations
        )

    def forward(self, x: torch.Tensor, state: StreamState | None = None) -> torch.Tensor:
        for unit in self.units:
            x = unit(x, state)
        return x


class SemanticEncoder(nn.Module):
    """Extractor + fold + aggregator producing per-frame semantic features."""

    def __init__(self, cfg: EncoderConfig | None = None, num_bins: int = NUM_BINS):
        super().__init__()
        cfg = cfg or EncoderConfig()
        self.cfg = cfg
        self.extractor = FeatureExtractor(cfg, num_bins)
        folded = cfg.conv_channels[-1] * self.extractor.out_bins
        if folded != cfg.semantic_channels:
            raise ShapeError(
                f"conv stack folds to {folded} channels but semantic_channels "
                f"is {cfg.semantic_channels}"
            )

        self.aggregator = ContextAggregator(cfg)

    def folded_features(self, cspec: torch.Tensor, lossmap: torch.Tensor,
                        state: StreamState | None = None) -> torch.Tensor:
        """Pre-aggregator features (B, C_S, T); the quantizer's input."""
        return fold_frequency(self.extractor(cspec, lossmap, state))

    def forward(self, cspec: torch.Tensor, lossmap: torch.Tensor,
                state: StreamState | None = None) -> torch.Tensor:
        return self.aggregator(self.folded_features(cspec, lossmap, state), state)

    def freeze(self) -> None:
        """Disable parameter updates (downstream training stage)."""
        for p in self.parameters():
            p.requires_grad_(False)
