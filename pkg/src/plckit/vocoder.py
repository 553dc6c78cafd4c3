"""Feature fusion and the causal waveform generator.

The generator upsamples 240-channel frame-rate features 160x to 16 kHz
samples through four (nearest-upsample + causal conv) stages, each followed
by a multi-receptive-field stack of causal residual blocks.  Nearest
upsampling plus left-only padding keeps the whole path causal: output sample
n depends only on input frames <= n // 160.  Output length is exactly
160 * T for every T >= 1.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import VocoderConfig
from .dsp import ShapeError
from .layers import CausalConv1d, FrameRepeatUpsample, StreamState

LEAKY_SLOPE = 0.1


class FeatureFusion(nn.Module):
    """Concatenate the two branch outputs and mix per frame with two linears."""

    def __init__(self, channels: int = 240, hidden: int = 240):
        super().__init__()
        self.lin1 = nn.Conv1d(2 * channels, hidden, 1)
        self.act = nn.PReLU()
        self.lin2 = nn.Conv1d(hidden, channels, 1)

    def forward(self, semantic: torch.Tensor, auxiliary: torch.Tensor) -> torch.Tensor:
        if semantic.shape[2] != auxiliary.shape[2]:
            raise ShapeError(
                f"branch frame counts differ: {semantic.shape[2]} vs {auxiliary.shape[2]}"
            )
        return self.lin2(self.act(self.lin1(torch.cat([semantic, auxiliary], dim=1))))


class ResidualUnit(nn.Module):
    """Two causal convs per dilation pair, residual-added."""

    def __init__(self, channels: int, kernel: int, dilations: tuple[tuple[int, int], ...]):
        super().__init__()
        self.convs1 = nn.ModuleList(
            CausalConv1d(channels, channels, kernel, dilation=d1) for d1, _ in dilations
        )
        self.convs2 = nn.ModuleList(
            CausalConv1d(channels, channels, kernel, dilation=d2) for _, d2 in dilations
        )

    def forward(self, x: torch.Tensor, state: StreamState | None = None) -> torch.Tensor:
        for c1, c2 in zip(self.convs1, self.convs2):
            y = c1(F.leaky_relu(x, LEAKY_SLOPE), state)
            y = c2(F.leaky_relu(y, LEAKY_SLOPE), state)
            x = x + y
        return x


class Generator(nn.Module):
    """Causal multi-receptive-field generator, 160x temporal upsampling."""

    def __init__(self, cfg: VocoderConfig | None = None):
        super().__init__()
        cfg = cfg or VocoderConfig()
        rate_product = 1
        for r in cfg.upsample_rates:
            rate_product *= r
        for k, r in zip(cfg.upsample_kernels, cfg.upsample_rates):
            if k != 2 * r:
                raise ShapeError(f"upsample kernel {k} must be twice the rate {r}")
        self.cfg = cfg
        self.total_upsample = rate_product

        self.pre = CausalConv1d(cfg.input_channels, cfg.base_channels, 7)
        self.upsamples = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        ch = cfg.base_channels
        for rate, kernel in zip(cfg.upsample_rates, cfg.upsample_kernels):
            out_ch = max(ch // 2, 2)
            self.upsamples.append(nn.ModuleList([
                FrameRepeatUpsample(rate),
                CausalConv1d(ch, out_ch, kernel),
            ]))
            self.resblocks.append(nn.ModuleList(
                ResidualUnit(out_ch, k, cfg.resblock_dilations)
                for k in cfg.resblock_kernels
            ))
            ch = out_ch
        self.post = CausalConv1d(ch, 1, 7)

    def forward(self, features: torch.Tensor, state: StreamState | None = None) -> torch.Tensor:
        """(B, C_M, T) -> (B, 1, 160 * T), samples in [-1, 1]."""
        if features.ndim != 3 or features.shape[1] != self.cfg.input_channels:
            raise ShapeError(
                f"expected (B, {self.cfg.input_channels}, T) features, got {tuple(features.shape)}"
            )
        x = self.pre(features, state)
        for (upsample, conv), blocks in zip(self.upsamples, self.resblocks):
            x = conv(upsample(F.leaky_relu(x, LEAKY_SLOPE)), state)
            acc = None
            for block in blocks:
                y = block(x, state)
                acc = y if acc is None else acc + y
            x = acc / len(blocks)
        return torch.tanh(self.post(F.leaky_relu(x, LEAKY_SLOPE), state))
