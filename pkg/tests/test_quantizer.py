import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    finite_difference_param_grads,
    relative_grad_error,
    toy_quantizer_config,
)
from plckit.config import ContrastiveConfig, QuantizerConfig
from plckit.dsp import ParameterError
from plckit.quantizer import (
    GumbelQuantizer,
    InputError,
    MathError,
    SamplingError,
    SkipBatch,
    anneal_temperature,
    contrastive_loss,
    cosine_similarity,
    diversity_loss,
    pretrain_loss,
    sample_distractors,
)

# ---------------------------------------------------------------------------
# independent scalar oracles (plain python loops, no torch ops shared with
# the implementation)


def oracle_cosine(a, b):
    num = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return num / (na * nb)


def oracle_match_loss(x, y, distractors, kappa):
    sims = [oracle_cosine(x, y)] + [oracle_cosine(x, d) for d in distractors]
    exps = [math.exp(s / kappa) for s in sims]
    return -math.log(exps[0] / sum(exps))


def oracle_diversity(avg_probs):
    g = len(avg_probs)
    v = len(avg_probs[0])
    total = 0.0
    for row in avg_probs:
        for p in row:
            if p > 0:
                total += p * math.log(p)
    return total / (g * v)


class TestAnneal:
    def test_step_zero(self):
        assert anneal_temperature(0) == 2.0

    def test_floor(self):
        assert anneal_temperature(10**9) == 0.5

    def test_halfway_step(self):
        # 0.999995^138629 = exp(138629 ln 0.999995) ~ exp(-0.69315) ~ 0.5
        assert abs(anneal_temperature(138629) - 1.0) < 1e-3

    def test_negative_step_rejected(self):
        with pytest.raises(ParameterError):
            anneal_temperature(-1)


class TestQuantize:
    def test_hard_mode_outputs_codebook_entries(self):
        torch.manual_seed(0)
        cfg = toy_quantizer_config(groups=2, entries=4, dim=8)
        quant = GumbelQuantizer(cfg)
        x = torch.randn(2, 8, 6)
        out, probs = quant(x, tau=1.0, hard=True)
        assert out.shape == (2, 8, 6)
        # identity-initialized projection: each group slice must be an entry
        for b in range(2):
            for t in range(6):
                for g in range(2):
                    slice_ = out[b, g * 4 : (g + 1) * 4, t]
                    matches = [
                        torch.equal(slice_, quant.codebook[g, v]) for v in range(4)
                    ]
                    assert any(matches)

    def test_single_entry_degenerate(self):
        torch.manual_seed(1)
        cfg = toy_quantizer_config(groups=2, entries=1, dim=8)
        quant = GumbelQuantizer(cfg)
        x = torch.randn(1, 8, 5)
        out, probs = quant(x, tau=0.7, hard=True)
        assert torch.all(probs == 1.0)
        for t in range(5):
            torch.testing.assert_close(out[0, :4, t], quant.codebook[0, 0])
            torch.testing.assert_close(out[0, 4:, t], quant.codebook[1, 0])

    def test_probs_rows_sum_to_one(self):
        torch.manual_seed(2)
        quant = GumbelQuantizer(toy_quantizer_config(entries=7, dim=8))
        _, probs = quant(torch.randn(3, 8, 4), tau=1.0)
        sums = probs.sum(dim=2)
        torch.testing.assert_close(sums, torch.ones_like(sums), atol=1e-6, rtol=0)

    def test_invalid_temperature(self):
        quant = GumbelQuantizer(toy_quantizer_config())
        with pytest.raises(ParameterError):
            quant(torch.randn(1, 8, 2), tau=0.0)

    def test_soft_mode_concentrates_on_argmax_at_low_tau(self):
        """Sharp logits: Gumbel draws agree with the noiseless argmax >= 99%."""
        torch.manual_seed(3)
        cfg = toy_quantizer_config(groups=1, entries=4, dim=4)
        quant = GumbelQuantizer(cfg)
        with torch.no_grad():
            quant.logit_proj.weight.zero_()
            quant.logit_proj.bias.copy_(torch.tensor([12.0, 0.0, 0.0, 0.0]))
        x = torch.randn(1, 4, 1)
        agree = 0
        n = 2000
        logits_argmax = 0
        for _ in range(n):
            out, _ = quant(x, tau=0.01, hard=False)
            # soft path forward value is one-hot: recover the selection
            selected = [
                v for v in range(4)
                if torch.allclose(out[0, :, 0], quant.similarity_proj(quant.codebook[0, v]))
            ]
            agree += selected == [logits_argmax]
        assert agree / n >= 0.99


class TestDiversityLoss:
    def test_uniform_closed_form_g2_v320(self):
        p = torch.full((2, 320), 1.0 / 320, dtype=torch.float64)
        expected = -math.log(320) / 320
        assert abs(diversity_loss(p).item() - expected) < 1e-9
        assert abs(expected + 0.018026) < 1e-5

    def test_one_hot_is_zero(self):
        p = torch.zeros(2, 5)
        p[:, 0] = 1.0
        assert diversity_loss(p).item() == 0.0

    def test_v2_closed_form(self):
        p = torch.tensor([[0.5, 0.5]])
        assert abs(diversity_loss(p).item() + math.log(2) / 2) < 1e-9
        assert abs(math.log(2) / 2 - 0.34657) < 1e-5

    def test_rows_must_sum_to_one(self):
        with pytest.raises(InputError):
            diversity_loss(torch.tensor([[0.7, 0.7]]))

    def test_bounds_and_minimum_at_uniform(self, rng):
        for _ in range(50):
            v = int(rng.integers(2, 12))
            raw = torch.tensor(rng.random((3, v)))
            p = raw / raw.sum(dim=1, keepdim=True)
            val = diversity_loss(p).item()
            assert -math.log(v) / v - 1e-9 <= val <= 0.0

    def test_matches_oracle(self, rng):
        for _ in range(100):
            raw = rng.random((2, 6)) + 1e-3
            p = raw / raw.sum(axis=1, keepdims=True)
            got = diversity_loss(torch.tensor(p)).item()
            want = oracle_diversity(p.tolist())
            assert abs(got - want) < 1e-9 * max(1, abs(want))

    def test_gradcheck(self):
        raw = torch.rand(2, 5, dtype=torch.float64) + 0.1
        p = (raw / raw.sum(dim=1, keepdim=True)).requires_grad_(True)
        assert torch.autograd.gradcheck(diversity_loss, (p,), eps=1e-6, atol=1e-7)


class TestContrastiveLoss:
    def test_orthogonal_distractors_anchor(self):
        # unit target equal to x, 100 orthogonal distractors, kappa = 0.1
        d = 128
        x = torch.zeros(d, dtype=torch.float64)
        x[0] = 1.0
        distractors = torch.zeros(100, d, dtype=torch.float64)
        for i in range(100):
            distractors[i, i + 1] = 1.0
        loss = contrastive_loss(x, x.clone(), distractors, kappa=0.1).item()
        expected = math.log(1 + 100 * math.exp(-10))
        assert abs(loss - expected) < 1e-9
        assert abs(expected - 4.530e-3) < 1e-5

    def test_all_identical_candidates(self):
        x = torch.tensor([1.0, 2.0, 3.0])
        distractors = x.expand(100, 3).clone()
        loss = contrastive_loss(x, x.clone(), distractors, kappa=0.1).item()
        assert abs(loss - math.log(101)) < 1e-6

    def test_nonnegative(self, rng):
        for _ in range(100):
            x = torch.tensor(rng.standard_normal(6))
            y = torch.tensor(rng.standard_normal(6))
            d = torch.tensor(rng.standard_normal((5, 6)))
            assert contrastive_loss(x, y, d, kappa=0.1).item() >= 0

    def test_matches_oracle_random(self, rng):
        for _ in range(100):
            x = rng.standard_normal(5)
            y = rng.standard_normal(5)
            d = rng.standard_normal((7, 5))
            got = contrastive_loss(
                torch.tensor(x), torch.tensor(y), torch.tensor(d), kappa=0.37
            ).item()
            want = oracle_match_loss(x, y, d, 0.37)
            assert abs(got - want) / max(1e-12, abs(want)) < 1e-9

    def test_scale_invariance_of_candidates(self, rng):
        x = torch.tensor(rng.standard_normal(8))
        y = torch.tensor(rng.standard_normal(8))
        d = torch.tensor(rng.standard_normal((4, 8)))
        base = contrastive_loss(x, y, d, kappa=0.2).item()
        scaled = contrastive_loss(x, y * 3.7, d, kappa=0.2).item()
        assert abs(base - scaled) < 1e-6
        d2 = d.clone()
        d2[2] *= 250.0
        assert abs(contrastive_loss(x, y, d2, kappa=0.2).item() - base) < 1e-6

    def test_zero_norm_rejected(self):
        x = torch.zeros(4)
        y = torch.ones(4)
        with pytest.raises(MathError):
            contrastive_loss(x, y, torch.ones(2, 4), kappa=0.1)

    def test_gradcheck(self):
        x = torch.randn(6, dtype=torch.float64, requires_grad=True)
        y = torch.randn(6, dtype=torch.float64, requires_grad=True)
        d = torch.randn(4, 6, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(
            lambda a, b, c: contrastive_loss(a, b, c, kappa=0.1), (x, y, d),
            eps=1e-6, atol=1e-7,
        )


class TestSampleDistractors:
    def test_pool_exactly_k(self):
        lm = np.zeros((2, 4), dtype=int)
        lm[0, 1] = lm[0, 3] = lm[1, 0] = lm[1, 2] = 1
        draws = sample_distractors(lm, (0, 1), k=3, seed=0)
        got = {tuple(row) for row in draws}
        assert got == {(0, 3), (1, 0), (1, 2)}

    def test_pool_of_one_with_replacement(self):
        lm = np.zeros((1, 4), dtype=int)
        lm[0, 1] = lm[0, 2] = 1
        draws = sample_distractors(lm, (0, 1), k=3, seed=0)
        assert [tuple(r) for r in draws] == [(0, 2)] * 3

    def test_empty_pool_raises(self):
        lm = np.zeros((1, 4), dtype=int)
        lm[0, 1] = 1
        with pytest.raises(SamplingError):
            sample_distractors(lm, (0, 1), k=2, seed=0)

    def test_deterministic(self):
        lm = (np.arange(20).reshape(2, 10) % 3 == 0).astype(int)
        a = sample_distractors(lm, (0, 0), k=4, seed=42)
        b = sample_distractors(lm, (0, 0), k=4, seed=42)
        np.testing.assert_array_equal(a, b)

    def test_uniformity_monte_carlo(self):
        lm = np.zeros((1, 11), dtype=int)
        lm[0, 1:] = 1  # pool of 10 after excluding the target
        lm[0, 0] = 1
        counts = {}
        n = 100000
        for i in range(n):
            draws = sample_distractors(lm, (0, 0), k=1, seed=i)
            key = tuple(draws[0])
            counts[key] = counts.get(key, 0) + 1
        freqs = np.array(list(counts.values())) / n
        assert len(counts) == 10
        assert np.all(np.abs(freqs - 0.1) < 0.01)


class TestPretrainLoss:
    def _toy_batch(self, seed=0):
        gen = torch.Generator().manual_seed(seed)
        x_s = torch.randn(2, 8, 8, generator=gen)
        y_q = torch.randn(2, 8, 8, generator=gen)
        probs = torch.softmax(torch.randn(2, 2, 5, 8, generator=gen), dim=2)
        lm = np.zeros((2, 8), dtype=int)
        lm[0, 2] = lm[0, 5] = lm[1, 1] = 1
        return x_s, y_q, probs, lm

    def test_alpha_zero_reduces_to_match_term(self):
        x_s, y_q, probs, lm = self._toy_batch()
        cfg = ContrastiveConfig(num_distractors=2, temperature=0.1, diversity_weight=0.0)
        total, match, _ = pretrain_loss(x_s, y_q, probs, lm, cfg, seed=0)
        assert torch.equal(total, match)

    def test_matches_scalar_oracle(self):
        x_s, y_q, probs, lm = self._toy_batch(seed=3)
        cfg = ContrastiveConfig(num_distractors=2, temperature=0.1, diversity_weight=0.1)
        total, match, div = pretrain_loss(x_s, y_q, probs, lm, cfg, seed=5)

        targets = [(b, t) for b in range(2) for t in range(8) if lm[b, t]]
        match_vals = []
        for i, (b, t) in enumerate(targets):
            draws = sample_distractors(lm, (b, t), 2, seed=[5, i])
            x = x_s[b, :, t].tolist()
            y = y_q[b, :, t].tolist()
            ds = [y_q[db, :, dt].tolist() for db, dt in draws]
            match_vals.append(oracle_match_loss(x, y, ds, 0.1))
        want_match = sum(match_vals) / len(match_vals)
        want_div = oracle_diversity(probs.mean(dim=(0, 3)).tolist())
        assert abs(match.item() - want_match) / abs(want_match) < 1e-6
        assert abs(div.item() - want_div) / abs(want_div) < 1e-6
        assert abs(total.item() - (want_match + 0.1 * want_div)) < 1e-6

    def test_no_lost_frames_skips_batch(self):
        x_s, y_q, probs, _ = self._toy_batch()
        with pytest.raises(SkipBatch):
            pretrain_loss(x_s, y_q, probs, np.zeros((2, 8), dtype=int),
                          ContrastiveConfig(), seed=0)

    def test_single_lost_frame_skips_batch(self):
        x_s, y_q, probs, _ = self._toy_batch()
        lm = np.zeros((2, 8), dtype=int)
        lm[0, 3] = 1
        with pytest.raises(SkipBatch):
            pretrain_loss(x_s, y_q, probs, lm, ContrastiveConfig(), seed=0)

    def test_gradients_reach_all_components(self):
        torch.manual_seed(4)
        quant = GumbelQuantizer(toy_quantizer_config(groups=2, entries=4, dim=8))
        features = torch.randn(2, 8, 8, requires_grad=True)
        x_s = torch.randn(2, 8, 8, requires_grad=True)
        lm = np.zeros((2, 8), dtype=int)
        lm[0, 1] = lm[0, 4] = lm[1, 6] = 1
        y_q, probs = quant(features, tau=1.0)
        cfg = ContrastiveConfig(num_distractors=3, temperature=0.1, diversity_weight=0.1)
        total, _, _ = pretrain_loss(x_s, y_q, probs, lm, cfg, seed=1)
        total.backward()
        assert x_s.grad is not None and x_s.grad.abs().sum() > 0
        assert features.grad is not None and features.grad.abs().sum() > 0
        assert quant.codebook.grad is not None and quant.codebook.grad.abs().sum() > 0
        assert quant.similarity_proj.weight.grad is not None
        assert quant.logit_proj.weight.grad is not None


class TestLossOracleSweep:
    """Randomized cross-checks of every loss against the scalar oracles."""

    def test_match_loss_100_instances(self, rng):
        for i in range(100):
            k = int(rng.integers(1, 8))
            dim = int(rng.integers(2, 10))
            kappa = float(rng.uniform(0.05, 1.0))
            x = rng.standard_normal(dim)
            y = rng.standard_normal(dim)
            d = rng.standard_normal((k, dim))
            got = contrastive_loss(
                torch.tensor(x), torch.tensor(y), torch.tensor(d), kappa
            ).item()
            want = oracle_match_loss(x, y, d, kappa)
            assert abs(got - want) / max(1e-12, abs(want)) < 1e-6

    def test_diversity_loss_100_instances(self, rng):
        for i in range(100):
            g = int(rng.integers(1, 4))
            v = int(rng.integers(2, 16))
            raw = rng.random((g, v)) + 1e-6
            p = raw / raw.sum(axis=1, keepdims=True)
            got = diversity_loss(torch.tensor(p)).item()
            want = oracle_diversity(p.tolist())
            assert abs(got - want) < 1e-9 + 1e-6 * abs(want)


class TestGradientChecks:
    def test_match_loss_fd_4dim(self):
        torch.manual_seed(5)
        x = torch.randn(4, dtype=torch.float64, requires_grad=True)
        y = torch.randn(4, dtype=torch.float64, requires_grad=True)
        d = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)

        def loss_fn():
            return contrastive_loss(x, y, d, kappa=0.1)

        analytic, numeric = finite_difference_param_grads(loss_fn, [x, y, d])
        assert relative_grad_error(analytic, numeric) < 1e-4

    def test_diversity_loss_fd_4dim(self):
        torch.manual_seed(6)
        raw = torch.rand(1, 4, dtype=torch.float64) + 0.05
        p = (raw / raw.sum(dim=1, keepdim=True)).detach().requires_grad_(True)

        def loss_fn():
            # renormalize inside so perturbed entries stay a distribution
            q = p / p.sum(dim=1, keepdim=True)
            return diversity_loss(q)

        analytic, numeric = finite_difference_param_grads(loss_fn, [p])
        assert relative_grad_error(analytic, numeric) < 1e-4
