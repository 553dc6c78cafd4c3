"""Run configuration: one dataclass per subsystem, JSON round-trippable.

Defaults are desk-scale (small channel counts, small batches) so the full
pipeline trains on a laptop CPU.  ``paper_preset`` swaps in the published
large-scale values; they are carried for provenance, not because desk runs
should use them.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_type_hints


class ConfigError(ValueError):
    """Unknown key, malformed value, or unusable combination."""


@dataclass
class EncoderConfig:
    conv_kernel: tuple[int, int] = (2, 5)
    freq_strides: tuple[int, ...] = (1, 4, 4, 2)
    conv_channels: tuple[int, ...] = (16, 32, 32, 40)
    semantic_channels: int = 240
    tcm_blocks: int = 2
    tcm_dilations: tuple[int, ...] = (1, 2, 4)
    tcm_kernel: int = 9
    tcm_hidden: int = 64


@dataclass
class AttentionConfig:
    window: int = 150
    groups: int = 4
    channels: int = 240
    blocks: int = 2
    front_channels: int = 8


@dataclass
class QuantizerConfig:
    groups: int = 2
    entries: int = 320
    input_dim: int = 240
    tau_init: float = 2.0
    tau_min: float = 0.5
    anneal_factor: float = 0.999995


@dataclass
class ContrastiveConfig:
    num_distractors: int = 100
    temperature: float = 0.1
    diversity_weight: float = 0.1


@dataclass
class VocoderConfig:
    base_channels: int = 64
    upsample_rates: tuple[int, ...] = (8, 5, 2, 2)
    upsample_kernels: tuple[int, ...] = (16, 10, 4, 4)
    resblock_kernels: tuple[int, ...] = (3, 7, 11)
    resblock_dilations: tuple[tuple[int, int], ...] = ((1, 1), (3, 1))
    input_channels: int = 240
    fuse_hidden: int = 240


@dataclass
class DiscriminatorConfig:
    mpd_periods: tuple[int, ...] = (2, 3, 5, 7, 11)
    msd_num_scales: int = 3
    mpd_channels: int = 8
    msd_channels: int = 16


@dataclass
class LossWeights:
    adv: float = 1.0
    fm: float = 2.0
    bin: float = 45.0
    mel: float = 0.045


@dataclass
class MelLossConfig:
    fft_sizes: tuple[int, ...] = (512, 1024, 2048)
    mel_bands: tuple[int, ...] = (64, 128, 128)
    log_floor: float = 1e-5


@dataclass
class FadePolicy:
    conceal_limit_ms: int = 140
    fade_out_ms: int = 20
    fade_in_ms: int = 10


@dataclass
class SimulationConfig:
    rate_min: float = 0.1
    rate_max: float = 0.5
    max_burst_packets: int = 11


@dataclass
class Stage1Config:
    learning_rate: float = 2e-4
    batch_size: int = 4
    steps: int = 200
    clip_seconds: float = 1.0
    # published scale, recorded for provenance: 240 epochs, batch 256
    paper_epochs: int = 240
    paper_batch_size: int = 256


@dataclass
class Stage2Config:
    learning_rate: float = 2e-4
    adam_betas: tuple[float, float] = (0.8, 0.99)
    lr_decay_per_epoch: float = 0.999
    steps_per_epoch: int = 100
    batch_size: int = 4
    steps: int = 500
    clip_seconds: float = 1.0
    # published scale, recorded for provenance: 50 epochs, batch 64
    paper_epochs: int = 50
    paper_batch_size: int = 64


@dataclass
class RunConfig:
    seed: int = 0
    compression: float = 0.3
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    vocoder: VocoderConfig = field(default_factory=VocoderConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    mel_loss: MelLossConfig = field(default_factory=MelLossConfig)
    fade: FadePolicy = field(default_factory=FadePolicy)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)


def paper_preset() -> RunConfig:
    """Published-scale hyperparameters; desk machines will not train this."""
    cfg = RunConfig()
    cfg.vocoder.base_channels = 512
    cfg.stage1.batch_size = cfg.stage1.paper_batch_size
    cfg.stage2.batch_size = cfg.stage2.paper_batch_size
    return cfg


PRESETS = {"desk": RunConfig, "paper": paper_preset}


def _to_jsonable(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _to_jsonable(getattr(value, f.name))
                for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    return value


def to_dict(cfg) -> dict:
    return _to_jsonable(cfg)


def _coerce(value, like):
    """Match JSON lists back to the tuple shapes the defaults use."""
    if isinstance(like, tuple) and isinstance(value, list):
        if like and isinstance(like[0], tuple):
            return tuple(tuple(v) for v in value)
        return tuple(value)
    return value


def from_dict(data: dict, cls=RunConfig):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) for {cls.__name__}: {', '.join(unknown)}")
    hints = get_type_hints(cls)
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        hint = hints.get(name)
        if dataclasses.is_dataclass(hint) and isinstance(value, dict):
            kwargs[name] = from_dict(value, hint)
        else:
            kwargs[name] = _coerce(value, getattr(defaults, name))
    return cls(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_dict(json.load(fh))


def save_config(path: str | Path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(cfg), fh, indent=2)
        fh.write("\n")
