"""Shared causal layers for the frame-rate and sample-rate networks.

Every temporal convolution pads on the left only, so output step t never
sees input steps > t.  Each stateful layer also supports incremental
(streaming) evaluation: pass a ``StreamState`` dict and the layer keeps its
own context tensor in it, producing bit-compatible outputs with the offline
path (up to float reassociation).
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

StreamState = dict  # module -> cached context tensor


class CausalConv1d(nn.Module):
    """1-D convolution, stride 1, left-padded by (kernel - 1) * dilation."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, dilation: int = 1,
                 groups: int = 1, bias: bool = True):
        super().__init__()
        self.context = (kernel - 1) * dilation
        self.conv = nn.Conv1d(in_ch, out_ch, kernel, dilation=dilation,
                              groups=groups, bias=bias)

    def forward(self, x: torch.Tensor, state: StreamState | None = None) -> torch.Tensor:
        # x: (B, C, T)
        if state is None:
            return self.conv(F.pad(x, (self.context, 0)))
        ctx = state.get(self)
        if ctx is None:
            ctx = x.new_zeros(x.shape[0], x.shape[1], self.context)
        full = torch.cat([ctx, x], dim=2)
        if self.context > 0:
            state[self] = full[:, :, -self.context:].detach()
        return self.conv(full)


class CausalConv2d(nn.Module):
    """2-D convolution over (time, freq): causal in time, symmetric in freq."""

    def __init__(self, in_ch: int, out_ch: int, kernel: tuple[int, int],
                 freq_stride: int = 1, bias: bool = True):
        super().__init__()
        kt, kf = kernel
        self.time_context = kt - 1
        self.freq_pad = (kf - 1) // 2
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=(1, freq_stride),
                              padding=(0, self.freq_pad), bias=bias)

    def forward(self, x: torch.Tensor, state: StreamState | None = None) -> torch.Tensor:
        # x: (B, C, T, F)
        if state is None:
            return self.conv(F.pad(x, (0, 0, self.time_context, 0)))
        ctx = state.get(self)
        if ctx is None:
            ctx = x.new_zeros(x.shape[0], x.shape[1], self.time_context, x.shape[3])
        full = torch.cat([ctx, x], dim=2)
        if self.time_context > 0:
            state[self] = full[:, :, -self.time_context:, :].detach()
        return self.conv(full)


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis, independently per time step.

    Unlike global or cumulative norms this keeps the layer causal and
    streaming-exact.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.norm = nn.LayerNorm(channels, eps=eps)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, C, T)
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class FrameRepeatUpsample(nn.Module):
    """Nearest-neighbour temporal upsampling: repeat each step `rate` times.

    Keeps causality exact: output step m depends only on input step m // rate.
    """

    def __init__(self, rate: int):
        super().__init__()
        self.rate = rate

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.repeat_interleave(x, self.rate, dim=2)
