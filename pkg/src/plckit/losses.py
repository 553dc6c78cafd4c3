"""Generator and discriminator training losses.

Least-squares adversarial terms, L1 feature matching over discriminator
intermediates, a power-law-compressed spectrogram MSE, and a multi-scale
log-mel MAE.  The spectral losses run on torch tensors so gradients flow to
the generator; their framing mirrors :mod:`plckit.dsp` exactly.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from . import dsp
from .config import LossWeights, MelLossConfig
from .dsp import ShapeError
from .mel import mel_filterbank

_MAG_EPS = 1e-9  # bounds the |X|^(p-1) factor's gradient near silence


def _frame(wave: torch.Tensor, window: int, hop: int, pad_left: int) -> torch.Tensor:
    """(B, L) -> (B, T, window) with T = ceil(L / hop) and left-only padding."""
    b, n = wave.shape
    t = -(-n // hop)
    wave = F.pad(wave, (pad_left, t * hop - n))
    return wave.unfold(1, window, hop)


def stft_torch(wave: torch.Tensor) -> torch.Tensor:
    """Differentiable mirror of :func:`plckit.dsp.stft`: (B, L) -> (B, T, F) complex."""
    win = torch.from_numpy(dsp.sqrt_hann_window()).to(wave.dtype)
    frames = _frame(wave, dsp.WINDOW, dsp.HOP, dsp.WINDOW - dsp.HOP) * win
    return torch.fft.rfft(frames, n=dsp.FFT_SIZE, dim=-1)


def power_compress_torch(spec: torch.Tensor, p: float) -> torch.Tensor:
    """(..., T, F) complex -> (..., 2, T, F) power-law compressed channels."""
    re, im = spec.real, spec.imag
    scale = (re * re + im * im + _MAG_EPS).pow((p - 1.0) / 2.0)
    return torch.stack([re * scale, im * scale], dim=-3)


def l_bin(pred: torch.Tensor, target: torch.Tensor, p: float = 0.3) -> torch.Tensor:
    """MSE between power-law compressed spectrograms of two waveforms."""
    if pred.shape != target.shape:
        raise ShapeError(f"waveform shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.ndim == 1:
        pred, target = pred[None], target[None]
    cp = power_compress_torch(stft_torch(pred), p)
    ct = power_compress_torch(stft_torch(target), p)
    return F.mse_loss(cp, ct)


class MelLoss(torch.nn.Module):
    """Mean absolute log-mel distance averaged over several FFT scales."""

    def __init__(self, cfg: MelLossConfig | None = None):
        super().__init__()
        self.cfg = cfg or MelLossConfig()
        for fft_size, bands in zip(self.cfg.fft_sizes, self.cfg.mel_bands):
            fb = torch.from_numpy(mel_filterbank(bands, fft_size)).float()
            self.register_buffer(f"fb_{fft_size}", fb, persistent=False)
            win = torch.hann_window(fft_size, periodic=True, dtype=torch.float64)
            self.register_buffer(f"win_{fft_size}", win, persistent=False)

    def _log_mel(self, wave: torch.Tensor, fft_size: int) -> torch.Tensor:
        win = getattr(self, f"win_{fft_size}").to(wave.dtype)
        fb = getattr(self, f"fb_{fft_size}").to(wave.dtype)
        hop = fft_size // 4
        if wave.shape[1] < fft_size:
            wave = F.pad(wave, (0, fft_size - wave.shape[1]))
        frames = wave.unfold(1, fft_size, hop) * win
        mag = torch.fft.rfft(frames, dim=-1).abs()
        return (mag @ fb.T).clamp_min(self.cfg.log_floor).log()

    def forward(self, pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        if pred.shape != target.shape:
            raise ShapeError(
                f"waveform shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}"
            )
        if pred.ndim == 1:
            pred, target = pred[None], target[None]
        total = 0.0
        for fft_size in self.cfg.fft_sizes:
            total = total + F.l1_loss(self._log_mel(pred, fft_size),
                                      self._log_mel(target, fft_size))
        return total / len(self.cfg.fft_sizes)


def l_mel(pred: torch.Tensor, target: torch.Tensor,
          cfg: MelLossConfig | None = None) -> torch.Tensor:
    return MelLoss(cfg)(pred, target)


def discriminator_loss(real_outputs, fake_outputs) -> torch.Tensor:
    """Least-squares objective: real scores toward 1, fake toward 0."""
    loss = 0.0
    for (_, real_score), (_, fake_score) in zip(real_outputs, fake_outputs):
        loss = loss + torch.mean((1.0 - real_score) ** 2) + torch.mean(fake_score**2)
    return loss


def adversarial_loss(fake_outputs) -> torch.Tensor:
    """Generator-side least-squares term: fake scores toward 1."""
    loss = 0.0
    for _, fake_score in fake_outputs:
        loss = loss + torch.mean((1.0 - fake_score) ** 2)
    return loss


def feature_matching_loss(real_outputs, fake_outputs) -> torch.Tensor:
    """Per sub-discriminator, the mean L1 over intermediate layers; summed."""
    loss = 0.0
    for (real_feats, _), (fake_feats, _) in zip(real_outputs, fake_outputs):
        layer_losses = [F.l1_loss(f, r.detach()) for r, f in zip(real_feats, fake_feats)]
        loss = loss + sum(layer_losses) / len(layer_losses)
    return loss


def generator_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    real_outputs,
    fake_outputs,
    weights: LossWeights | None = None,
    mel: MelLoss | None = None,
    compression: float = 0.3,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted combination: adv * (L_adv + fm * L_fm) + bin * L_bin + mel * L_mel."""
    w = weights or LossWeights()
    mel = mel or MelLoss()
    terms = {
        "adv": adversarial_loss(fake_outputs),
        "fm": feature_matching_loss(real_outputs, fake_outputs),
        "bin": l_bin(pred, target, compression),
        "mel": mel(pred, target),
    }
    total = (
        w.adv * (terms["adv"] + w.fm * terms["fm"])
        + w.bin * terms["bin"]
        + w.mel * terms["mel"]
    )
    return total, {k: float(v.detach()) for k, v in terms.items()}
