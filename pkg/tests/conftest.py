import numpy as np
import pytest
import torch

from plckit.config import (
    AttentionConfig,
    EncoderConfig,
    QuantizerConfig,
    RunConfig,
    VocoderConfig,
)
from plckit.dsp import AudioClip


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def speechy(seed=0, seconds=1.0):
    """Harmonic-plus-noise signal with a moving pitch and envelope."""
    gen = np.random.default_rng(seed)
    n = int(seconds * 16000)
    t = np.arange(n) / 16000
    f0 = 110 + 30 * np.sin(2 * np.pi * 1.3 * t + gen.uniform(0, 6.28))
    phase = np.cumsum(2 * np.pi * f0 / 16000)
    x = sum((0.5 ** k) * np.sin((k + 1) * phase) for k in range(5))
    env = 0.4 + 0.3 * np.sin(2 * np.pi * 2.1 * t + gen.uniform(0, 6.28))
    x = x * env + 0.01 * gen.standard_normal(n)
    return AudioClip(0.25 * x / np.abs(x).max())


@pytest.fixture
def tiny_run_config():
    """Full-pipeline config small enough for per-test model forwards."""
    cfg = RunConfig()
    cfg.vocoder.base_channels = 16
    cfg.discriminator.mpd_channels = 4
    cfg.discriminator.msd_channels = 8
    return cfg


def toy_encoder_config():
    """5-frame-scale encoder for gradient and causality probes."""
    return EncoderConfig(
        conv_kernel=(2, 3),
        freq_strides=(1, 2, 2, 1),
        conv_channels=(3, 3, 3, 2),
        semantic_channels=4,
        tcm_blocks=1,
        tcm_dilations=(1, 2),
        tcm_kernel=3,
        tcm_hidden=4,
    )


def toy_attention_config(blocks=1, window=4):
    return AttentionConfig(window=window, groups=2, channels=8, blocks=blocks,
                           front_channels=2)


def toy_vocoder_config():
    return VocoderConfig(
        base_channels=8,
        upsample_rates=(2, 2),
        upsample_kernels=(4, 4),
        resblock_kernels=(3,),
        resblock_dilations=((1, 1),),
        input_channels=6,
        fuse_hidden=6,
    )


def toy_quantizer_config(groups=2, entries=4, dim=8):
    return QuantizerConfig(groups=groups, entries=entries, input_dim=dim)


def finite_difference_param_grads(loss_fn, params, eps=1e-6, max_entries=6, seed=0):
    """Central finite differences over a sample of parameter entries.

    Returns (analytic, numeric) flat arrays for the sampled entries.
    loss_fn must rebuild the loss from the current parameter values.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=False)
    picker = np.random.default_rng(seed)
    analytic, numeric = [], []
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        count = min(max_entries, flat.numel())
        idx = picker.choice(flat.numel(), size=count, replace=False)
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
            hi = loss_fn().item()
            with torch.no_grad():
                flat[i] = orig - eps
            lo = loss_fn().item()
            with torch.no_grad():
                flat[i] = orig
            numeric.append((hi - lo) / (2 * eps))
            analytic.append(g.reshape(-1)[i].item())
    return np.array(analytic), np.array(numeric)


def relative_grad_error(analytic, numeric):
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / scale))
