"""Gumbel-softmax product quantizer and the contrastive pretraining losses.

The quantizer discretizes clean-branch features into one entry per codebook
group; the pretraining loss asks lossy-branch features at lost frames to
identify their own quantized target among distractors drawn from other lost
frames in the batch, plus an entropy term that pushes codebook usage toward
uniform.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ContrastiveConfig, QuantizerConfig
from .dsp import ParameterError, ShapeError


class MathError(ValueError):
    """Degenerate numerical input (zero-norm vector)."""


class InputError(ValueError):
    """Input violates a distribution constraint."""


class SamplingError(ValueError):
    """Distractor pool is empty for the requested target."""


class SkipBatch(Exception):
    """Batch contains no usable contrastive targets; caller should skip it."""


def anneal_temperature(step: int, cfg: QuantizerConfig | None = None) -> float:
    """tau = max(tau_min, tau_init * factor^step)."""
    cfg = cfg or QuantizerConfig()
    if step < 0:
        raise ParameterError("step must be >= 0")
    return max(cfg.tau_min, cfg.tau_init * cfg.anneal_factor**step)


class GumbelQuantizer(nn.Module):
    """Product quantizer with G groups of V entries, Gumbel-softmax trained.

    Soft mode draws Gumbel noise and uses straight-through hard selection on
    the forward value; hard mode is a pure argmax (inference and tests).
    The concatenated codewords pass through a linear projection (identity at
    init) into the similarity space.
    """

    def __init__(self, cfg: QuantizerConfig | None = None):
        super().__init__()
        cfg = cfg or QuantizerConfig()
        if cfg.input_dim % cfg.groups:
            raise ShapeError(
                f"input dim {cfg.input_dim} does not split into {cfg.groups} groups"
            )
        self.cfg = cfg
        self.groups = cfg.groups
        self.entries = cfg.entries
        self.entry_dim = cfg.input_dim // cfg.groups
        self.logit_proj = nn.Linear(cfg.input_dim, cfg.groups * cfg.entries)
        self.codebook = nn.Parameter(
            torch.randn(cfg.groups, cfg.entries, self.entry_dim) * 0.1
        )
        self.similarity_proj = nn.Linear(cfg.input_dim, cfg.input_dim)
        with torch.no_grad():
            self.similarity_proj.weight.copy_(torch.eye(cfg.input_dim))
            self.similarity_proj.bias.zero_()

    def forward(self, features: torch.Tensor, tau: float,
                hard: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, C, T) features -> (quantized (B, C, T), probs (B, G, V, T)).

        probs are the noise-free softmax over entries per group and frame.
        """
        if tau <= 0:
            raise ParameterError(f"Gumbel temperature must be > 0, got {tau}")
        if features.ndim != 3 or features.shape[1] != self.cfg.input_dim:
            raise ShapeError(
                f"expected (B, {self.cfg.input_dim}, T) features, got {tuple(features.shape)}"
            )
        b, _, t = features.shape
        logits = self.logit_proj(features.transpose(1, 2))
        logits = logits.reshape(b, t, self.groups, self.entries)
        probs = torch.softmax(logits, dim=-1)
        if hard:
            onehot = F.one_hot(logits.argmax(dim=-1), self.entries).to(features.dtype)
        else:
            onehot = F.gumbel_softmax(logits, tau=tau, hard=True, dim=-1)
        codes = torch.einsum("btgv,gvd->btgd", onehot, self.codebook)
        quantized = self.similarity_proj(codes.reshape(b, t, -1))
        return quantized.transpose(1, 2), probs.permute(0, 2, 3, 1)


def diversity_loss(avg_probs: torch.Tensor) -> torch.Tensor:
    """Mean over (group, entry) of p log p for the batch-averaged softmax.

    avg_probs: (G, V), each row a distribution.  Minimized (at -ln(V)/V) by
    uniform usage; 0 at one-hot usage (0 log 0 := 0 via clamping).
    """
    if avg_probs.ndim != 2:
        raise ShapeError(f"expected (G, V) averaged probabilities, got {tuple(avg_probs.shape)}")
    sums = avg_probs.sum(dim=-1)
    if not torch.allclose(sums, torch.ones_like(sums), atol=1e-4):
        raise InputError(f"rows must sum to 1, got {sums.tolist()}")
    g, v = avg_probs.shape
    p = avg_probs.clamp_min(1e-12)
    return (avg_probs * p.log()).sum() / (g * v)


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last axis; raises on zero-norm vectors."""
    na = a.norm(dim=-1)
    nb = b.norm(dim=-1)
    if (na == 0).any() or (nb == 0).any():
        raise MathError("cosine similarity undefined for zero-norm vectors")
    return (a * b).sum(dim=-1) / (na * nb)


def contrastive_loss(x_t: torch.Tensor, y_t: torch.Tensor,
                     distractors: torch.Tensor, kappa: float) -> torch.Tensor:
    """-log softmax of the true target among K+1 cosine-similarity logits.

    x_t: (..., d) lossy-branch feature, y_t: (..., d) its quantized target,
    distractors: (..., K, d).  Stabilized with logsumexp.  Returns (...) >= 0.
    """
    if kappa <= 0:
        raise ParameterError(f"softmax temperature must be > 0, got {kappa}")
    candidates = torch.cat([y_t.unsqueeze(-2), distractors], dim=-2)
    sims = cosine_similarity(x_t.unsqueeze(-2), candidates)  # (..., K+1)
    logits = sims / kappa
    return torch.logsumexp(logits, dim=-1) - logits[..., 0]


def lost_positions(batch_lossmaps: np.ndarray) -> np.ndarray:
    """(N, 2) array of (utterance, frame) indices of lost frames."""
    lm = np.asarray(batch_lossmaps)
    return np.argwhere(lm != 0)


def sample_distractors(batch_lossmaps: np.ndarray, target_position: tuple[int, int],
                       k: int, seed) -> np.ndarray:
    """K (utterance, frame) positions drawn uniformly from the batch's lost
    frames, excluding the target; without replacement when the pool is large
    enough, otherwise with replacement.  Deterministic given seed.
    """
    pool = lost_positions(batch_lossmaps)
    keep = ~((pool[:, 0] == target_position[0]) & (pool[:, 1] == target_position[1]))
    pool = pool[keep]
    if len(pool) == 0:
        raise SamplingError("no lost frames to draw distractors from")
    rng = np.random.default_rng(seed)
    replace = len(pool) < k
    idx = rng.choice(len(pool), size=k, replace=replace)
    return pool[idx]


def pretrain_loss(
    x_s: torch.Tensor,
    y_q: torch.Tensor,
    probs: torch.Tensor,
    batch_lossmaps: np.ndarray,
    cfg: ContrastiveConfig,
    seed: int,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Combined pretraining loss over one batch.

    x_s: (B, C, T) lossy-branch semantic features; y_q: (B, C, T) quantized
    clean targets; probs: (B, G, V, T) quantizer softmax; batch_lossmaps:
    (B, T) loss flags.  The match term averages over every lost frame that
    has at least one other lost frame to draw distractors from.

    Returns (total, match_term, diversity_term); total = match + weight * div.
    Raises SkipBatch when no frame qualifies.
    """
    lm = np.asarray(batch_lossmaps)
    targets = lost_positions(lm)
    if len(targets) < 2:
        # a single lost frame has an empty distractor pool
        raise SkipBatch("not enough lost frames for a contrastive target")

    draws = np.stack([
        sample_distractors(lm, (int(b), int(t)), cfg.num_distractors, seed=[seed, i])
        for i, (b, t) in enumerate(targets)
    ])  # (N, K, 2)

    bi = torch.from_numpy(targets[:, 0]).long()
    ti = torch.from_numpy(targets[:, 1]).long()
    x = x_s.permute(0, 2, 1)[bi, ti]  # (N, C)
    y = y_q.permute(0, 2, 1)[bi, ti]
    db = torch.from_numpy(draws[..., 0]).long()
    dt = torch.from_numpy(draws[..., 1]).long()
    d = y_q.permute(0, 2, 1)[db, dt]  # (N, K, C)

    match = contrastive_loss(x, y, d, cfg.temperature).mean()
    avg_probs = probs.mean(dim=(0, 3))
    div = diversity_loss(avg_probs)
    return match + cfg.diversity_weight * div, match, div
