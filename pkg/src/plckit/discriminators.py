"""Multi-period and multi-scale waveform discriminators.

Both follow the usual GAN-vocoder shapes, scaled down by default so desk
machines can run the adversarial stage.  Each sub-discriminator returns its
intermediate feature maps (for feature matching) and a score map.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DiscriminatorConfig

MIN_INPUT_SAMPLES = 256


class LengthError(ValueError):
    """Waveform shorter than the discriminator stack supports."""


class PeriodDiscriminator(nn.Module):
    """Reshapes the waveform into `period` columns and applies 2-D convs."""

    def __init__(self, period: int, channels: int = 8):
        super().__init__()
        self.period = period
        chs = [1, channels, channels * 4, channels * 16, channels * 16]
        self.convs = nn.ModuleList(
            nn.Conv2d(chs[i], chs[i + 1], (5, 1), stride=(3, 1), padding=(2, 0))
            for i in range(4)
        )
        self.post = nn.Conv2d(chs[-1], 1, (3, 1), padding=(1, 0))

    def forward(self, x: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor]:
        b, c, t = x.shape
        if t % self.period:
            pad = self.period - t % self.period
            x = F.pad(x, (0, pad), mode="reflect")
            t = t + pad
        x = x.view(b, c, t // self.period, self.period)
        features = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            features.append(x)
        score = self.post(x)
        features.append(score)
        return features, torch.flatten(score, 1)


class ScaleDiscriminator(nn.Module):
    """Strided 1-D convs on a (possibly pooled) waveform."""

    def __init__(self, channels: int = 16):
        super().__init__()
        c = channels
        self.convs = nn.ModuleList([
            nn.Conv1d(1, c, 15, stride=1, padding=7),
            nn.Conv1d(c, c * 2, 41, stride=4, groups=4, padding=20),
            nn.Conv1d(c * 2, c * 4, 41, stride=4, groups=8, padding=20),
            nn.Conv1d(c * 4, c * 4, 5, stride=1, padding=2),
        ])
        self.post = nn.Conv1d(c * 4, 1, 3, padding=1)

    def forward(self, x: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor]:
        features = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            features.append(x)
        score = self.post(x)
        features.append(score)
        return features, torch.flatten(score, 1)


class DiscriminatorSet(nn.Module):
    """MPD over periods (2, 3, 5, 7, 11) + MSD over scales (1, 2, 4)."""

    def __init__(self, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        cfg = cfg or DiscriminatorConfig()
        self.cfg = cfg
        self.period_discs = nn.ModuleList(
            PeriodDiscriminator(p, cfg.mpd_channels) for p in cfg.mpd_periods
        )
        self.scale_discs = nn.ModuleList(
            ScaleDiscriminator(cfg.msd_channels) for _ in range(cfg.msd_num_scales)
        )
        self.pool = nn.AvgPool1d(4, stride=2, padding=2)

    def forward(self, wave: torch.Tensor) -> list[tuple[list[torch.Tensor], torch.Tensor]]:
        """(B, 1, L) -> list of (feature list, score) per sub-discriminator."""
        if wave.ndim != 3 or wave.shape[1] != 1:
            raise ValueError(f"expected (B, 1, L) waveform, got {tuple(wave.shape)}")
        if wave.shape[2] < MIN_INPUT_SAMPLES:
            raise LengthError(
                f"waveform of {wave.shape[2]} samples is shorter than the "
                f"required {MIN_INPUT_SAMPLES}"
            )
        outputs = [disc(wave) for disc in self.period_discs]
        x = wave
        for i, disc in enumerate(self.scale_discs):
            if i > 0:
                x = self.pool(x)
            outputs.append(disc(x))
        return outputs
