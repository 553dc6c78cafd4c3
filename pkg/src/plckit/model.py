"""Full concealment model: both encoder branches, fusion, and the generator.

The model resynthesizes every frame, lost or not; it never copies input
samples through.  Offline inference (:func:`conceal`) and the streaming
session produce the same waveform up to float accumulation order.
"""

from __future__ import annotations

import numpy as np
import torch

from . import dsp
from .auxiliary import AuxiliaryEncoder
from .config import FadePolicy, RunConfig
from .dsp import AudioClip, ShapeError
from .layers import StreamState
from .quantizer import GumbelQuantizer
from .semantic import SemanticEncoder
from .traces import FrameLossMap
from .vocoder import FeatureFusion, Generator


class PLCModel(torch.nn.Module):
    """Semantic branch + auxiliary branch -> fused features -> waveform."""

    def __init__(self, cfg: RunConfig | None = None):
        super().__init__()
        cfg = cfg or RunConfig()
        if cfg.encoder.semantic_channels != cfg.attention.channels:
            raise ShapeError("branch channel counts must match for fusion")
        self.cfg = cfg
        self.semantic = SemanticEncoder(cfg.encoder)
        self.auxiliary = AuxiliaryEncoder(cfg.attention)
        self.fusion = FeatureFusion(cfg.vocoder.input_channels, cfg.vocoder.fuse_hidden)
        self.generator = Generator(cfg.vocoder)
        # stage-1 companion; unused at synthesis time but kept with the model
        # so one checkpoint carries the whole system
        self.quantizer = GumbelQuantizer(cfg.quantizer)

    def fuse_features(self, cspec: torch.Tensor, lossmap: torch.Tensor,
                      state: StreamState | None = None) -> torch.Tensor:
        x_s = self.semantic(cspec, lossmap, state)
        x_a = self.auxiliary(cspec, lossmap, state)
        return self.fusion(x_s, x_a)

    def forward(self, cspec: torch.Tensor, lossmap: torch.Tensor,
                state: StreamState | None = None) -> torch.Tensor:
        """(B, 2, T, F) compressed spectrogram + (B, T) loss map -> (B, 1, 160*T)."""
        return self.generator(self.fuse_features(cspec, lossmap, state), state)

    def generator_parameters(self):
        """Everything trained in the adversarial stage (semantic excluded)."""
        yield from self.auxiliary.parameters()
        yield from self.fusion.parameters()
        yield from self.generator.parameters()


def clip_to_model_input(clip: AudioClip, lossmap: FrameLossMap,
                        compression: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Compressed-spectrogram tensors for one utterance (batch of one)."""
    spec = dsp.stft(clip)
    t = spec.shape[0]
    if len(lossmap) != t:
        raise ShapeError(f"loss map has {len(lossmap)} frames, clip has {t}")
    cspec = dsp.power_compress(spec, compression)
    x = torch.from_numpy(cspec[None]).float()
    lm = torch.from_numpy(np.asarray(lossmap.frame_flags)[None]).float()
    return x, lm


def conceal(model: PLCModel, lossy: AudioClip, lossmap: FrameLossMap,
            policy: FadePolicy | None = None) -> AudioClip:
    """Offline concealment of a whole utterance.

    Resynthesizes the full waveform from the lossy input and its loss map,
    trims to the input length, and applies the long-burst fade policy when
    given.
    """
    from .streaming import apply_fade  # local import: streaming builds on model

    x, lm = clip_to_model_input(lossy, lossmap, model.cfg.compression)
    model.eval()
    with torch.no_grad():
        wave = model(x, lm)[0, 0].numpy().astype(np.float64)
    wave = wave[: len(lossy)]
    if policy is not None:
        wave = apply_fade(wave, lossmap, policy)
    return AudioClip(wave)
