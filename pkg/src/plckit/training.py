"""Two-stage training: contrastive pretraining, then adversarial synthesis.

Stage 1 optimizes the semantic encoder and quantizer with the contrastive +
diversity objective on simulated losses.  Stage 2 freezes the semantic
branch and trains the auxiliary branch, fusion, generator, and both
discriminator families with the weighted adversarial objective.  Runs are
deterministic given the config seed (single worker, CPU).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import dsp
from .checkpoint import (
    STAGE_ADVERSARIAL,
    STAGE_CONTRASTIVE,
    TrainState,
    load_checkpoint,
    load_module_tensors,
    module_tensors,
    save_checkpoint,
)
from .config import ConfigError, RunConfig
from .discriminators import DiscriminatorSet
from .dsp import AudioClip
from .losses import MelLoss, discriminator_loss, generator_loss
from .model import PLCModel
from .quantizer import GumbelQuantizer, SkipBatch, anneal_temperature, pretrain_loss
from .semantic import SemanticEncoder
from .traces import apply_trace, gen_random_trace


def configure_workers() -> int:
    """Apply PLC_NUM_WORKERS: 0 (default) pins torch to one thread, which is
    what makes fixed-seed loss trajectories bit-reproducible; N > 0 allows N
    threads and gives up bit-exact reruns.
    """
    workers = int(os.environ.get("PLC_NUM_WORKERS", "0"))
    torch.set_num_threads(workers if workers > 0 else 1)
    return workers


@dataclass
class Batch:
    clean: torch.Tensor  # (B, L) waveforms
    lossy_cspec: torch.Tensor  # (B, 2, T, F)
    clean_cspec: torch.Tensor  # (B, 2, T, F)
    lossmap: torch.Tensor  # (B, T) floats
    lossmap_np: np.ndarray  # (B, T) ints


def load_corpus(directory: str | Path) -> list[AudioClip]:
    paths = sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise ConfigError(f"no .wav files under {directory}")
    return [dsp.read_wav(p) for p in paths]


def _crop(clip: AudioClip, length: int, rng: np.random.Generator) -> np.ndarray:
    samples = clip.samples
    if len(samples) < length:
        samples = np.tile(samples, -(-length // len(samples)))
    start = int(rng.integers(0, len(samples) - length + 1))
    return samples[start : start + length]


def make_batch(corpus: list[AudioClip], cfg: RunConfig, batch_size: int,
               clip_seconds: float, rng: np.random.Generator) -> Batch:
    """Random crops with freshly simulated bounded-burst losses."""
    length = int(round(clip_seconds * dsp.SAMPLE_RATE / dsp.WINDOW)) * dsp.WINDOW
    num_packets = length // dsp.WINDOW
    clean_list, lossy_list, maps = [], [], []
    for _ in range(batch_size):
        clip = corpus[int(rng.integers(0, len(corpus)))]
        clean = _crop(clip, length, rng)
        rate = float(rng.uniform(cfg.simulation.rate_min, cfg.simulation.rate_max))
        trace = gen_random_trace(
            num_packets, rate, cfg.simulation.max_burst_packets,
            seed=int(rng.integers(2**31)),
        )
        lossy, lossmap = apply_trace(AudioClip(clean), trace)
        clean_list.append(clean)
        lossy_list.append(lossy.samples)
        maps.append(lossmap.frame_flags)

    lossmap_np = np.stack(maps)
    to_cspec = lambda w: dsp.power_compress(dsp.stft(w), cfg.compression)
    lossy_cspec = np.stack([to_cspec(w) for w in lossy_list])
    clean_cspec = np.stack([to_cspec(w) for w in clean_list])
    return Batch(
        clean=torch.from_numpy(np.stack(clean_list)).float(),
        lossy_cspec=torch.from_numpy(lossy_cspec).float(),
        clean_cspec=torch.from_numpy(clean_cspec).float(),
        lossmap=torch.from_numpy(lossmap_np).float(),
        lossmap_np=lossmap_np,
    )


def _write_log(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def train_stage1(
    corpus: list[AudioClip],
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    steps: int | None = None,
) -> tuple[TrainState, list[dict]]:
    """Contrastive pretraining of the semantic branch + quantizer."""
    if not corpus:
        raise ConfigError("empty training corpus")
    steps = steps if steps is not None else cfg.stage1.steps
    configure_workers()
    torch.manual_seed(cfg.seed)
    encoder = SemanticEncoder(cfg.encoder)
    quant = GumbelQuantizer(cfg.quantizer)
    opt = torch.optim.Adam(
        list(encoder.parameters()) + list(quant.parameters()),
        lr=cfg.stage1.learning_rate,
    )

    rows = []
    for step in range(steps):
        rng = np.random.default_rng([cfg.seed, 1, step])
        batch = make_batch(corpus, cfg, cfg.stage1.batch_size, cfg.stage1.clip_seconds, rng)
        tau = anneal_temperature(step, cfg.quantizer)
        zero_map = torch.zeros_like(batch.lossmap)
        clean_features = encoder.folded_features(batch.clean_cspec, zero_map)
        y_q, probs = quant(clean_features, tau)
        x_s = encoder(batch.lossy_cspec, batch.lossmap)
        try:
            total, match, div = pretrain_loss(
                x_s, y_q, probs, batch.lossmap_np, cfg.contrastive, seed=[cfg.seed, 2, step]
            )
        except SkipBatch:
            continue
        opt.zero_grad()
        total.backward()
        opt.step()
        rows.append({
            "step": step,
            "total": float(total.detach()),
            "match": float(match.detach()),
            "diversity": float(div.detach()),
            "tau": tau,
        })

    state = TrainState(
        stage=STAGE_CONTRASTIVE,
        step=steps,
        seed=cfg.seed,
        config=cfg,
        tensors={
            **module_tensors(encoder, "semantic."),
            **module_tensors(quant, "quantizer."),
        },
    )
    if out_dir is not None:
        save_checkpoint(out_dir, state)
        _write_log(Path(out_dir) / "training_log.csv", rows)
    return state, rows


def build_model_from_pretrained(pretrained: TrainState, cfg: RunConfig | None = None) -> PLCModel:
    """Fresh model with the semantic branch and quantizer restored."""
    cfg = cfg or pretrained.config
    torch.manual_seed(cfg.seed)
    model = PLCModel(cfg)
    load_module_tensors(model.semantic, pretrained.tensors, "semantic.")
    load_module_tensors(model.quantizer, pretrained.tensors, "quantizer.")
    return model


def train_stage2(
    corpus: list[AudioClip],
    cfg: RunConfig,
    pretrained: TrainState | str | Path,
    out_dir: str | Path | None = None,
    steps: int | None = None,
) -> tuple[TrainState, PLCModel, list[dict]]:
    """Adversarial synthesis training with the semantic branch frozen."""
    if not corpus:
        raise ConfigError("empty training corpus")
    if not isinstance(pretrained, TrainState):
        path = Path(pretrained)
        if not (path / "manifest.json").exists():
            raise ConfigError(f"no pretrained checkpoint at {path}")
        pretrained = load_checkpoint(path)
    steps = steps if steps is not None else cfg.stage2.steps
    configure_workers()

    model = build_model_from_pretrained(pretrained, cfg)
    model.semantic.freeze()
    discs = DiscriminatorSet(cfg.discriminator)
    mel = MelLoss(cfg.mel_loss)
    opt_g = torch.optim.Adam(
        model.generator_parameters(), lr=cfg.stage2.learning_rate, betas=cfg.stage2.adam_betas
    )
    opt_d = torch.optim.Adam(
        discs.parameters(), lr=cfg.stage2.learning_rate, betas=cfg.stage2.adam_betas
    )
    sched_g = torch.optim.lr_scheduler.ExponentialLR(opt_g, cfg.stage2.lr_decay_per_epoch)
    sched_d = torch.optim.lr_scheduler.ExponentialLR(opt_d, cfg.stage2.lr_decay_per_epoch)

    rows = []
    for step in range(steps):
        rng = np.random.default_rng([cfg.seed, 3, step])
        batch = make_batch(corpus, cfg, cfg.stage2.batch_size, cfg.stage2.clip_seconds, rng)
        target = batch.clean.unsqueeze(1)
        pred = model(batch.lossy_cspec, batch.lossmap)

        d_loss = discriminator_loss(discs(target), discs(pred.detach()))
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        total, terms = generator_loss(
            pred.squeeze(1), batch.clean, discs(target), discs(pred),
            cfg.loss_weights, mel, cfg.compression,
        )
        opt_g.zero_grad()
        total.backward()
        opt_g.step()

        if (step + 1) % cfg.stage2.steps_per_epoch == 0:
            sched_g.step()
            sched_d.step()
        rows.append({
            "step": step,
            "d_loss": float(d_loss.detach()),
            "g_total": float(total.detach()),
            **{f"g_{k}": v for k, v in terms.items()},
        })

    state = TrainState(
        stage=STAGE_ADVERSARIAL,
        step=steps,
        seed=cfg.seed,
        config=cfg,
        tensors={
            **module_tensors(model, "model."),
            **module_tensors(discs, "disc."),
        },
    )
    if out_dir is not None:
        save_checkpoint(out_dir, state)
        _write_log(Path(out_dir) / "training_log.csv", rows)
    return state, model, rows


def load_model(checkpoint_dir: str | Path) -> PLCModel:
    """Restore a synthesis model from an adversarial-stage checkpoint."""
    state = load_checkpoint(checkpoint_dir)
    model = PLCModel(state.config)
    if state.stage == STAGE_ADVERSARIAL:
        load_module_tensors(model, state.tensors, "model.")
    else:
        load_module_tensors(model.semantic, state.tensors, "semantic.")
        load_module_tensors(model.quantizer, state.tensors, "quantizer.")
    return model
