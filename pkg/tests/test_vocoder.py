import numpy as np
import pytest
import torch

from conftest import (
    finite_difference_param_grads,
    relative_grad_error,
    toy_vocoder_config,
)
from plckit.config import VocoderConfig
from plckit.dsp import ShapeError
from plckit.vocoder import FeatureFusion, Generator


class TestFusion:
    def test_shapes(self):
        torch.manual_seed(0)
        fuse = FeatureFusion(240, 240)
        out = fuse(torch.randn(2, 240, 7), torch.randn(2, 240, 7))
        assert out.shape == (2, 240, 7)

    def test_frame_local(self):
        torch.manual_seed(1)
        fuse = FeatureFusion(6, 6)
        a = torch.randn(1, 6, 9)
        b = torch.randn(1, 6, 9)
        base = fuse(a, b)
        bumped = a.clone()
        bumped[:, :, 4] += 1.0
        out = fuse(bumped, b)
        mask = torch.ones(9, dtype=torch.bool)
        mask[4] = False
        assert torch.equal(out[:, :, mask], base[:, :, mask])
        assert not torch.equal(out[:, :, 4], base[:, :, 4])

    def test_zero_init_zero_output(self):
        fuse = FeatureFusion(6, 6)
        with torch.no_grad():
            for p in fuse.parameters():
                p.zero_()
        assert torch.all(fuse(torch.zeros(1, 6, 3), torch.zeros(1, 6, 3)) == 0)

    def test_frame_count_mismatch(self):
        fuse = FeatureFusion(6, 6)
        with pytest.raises(ShapeError):
            fuse(torch.zeros(1, 6, 3), torch.zeros(1, 6, 4))


class TestGenerator:
    def test_upsample_product_is_160(self):
        gen = Generator(VocoderConfig(base_channels=8))
        assert gen.total_upsample == 160

    def test_kernel_rate_relation_enforced(self):
        with pytest.raises(ShapeError):
            Generator(VocoderConfig(upsample_rates=(8, 5, 2, 2),
                                    upsample_kernels=(15, 10, 4, 4)))

    def test_length_law_t25(self):
        torch.manual_seed(2)
        gen = Generator(VocoderConfig(base_channels=8))
        out = gen(torch.randn(1, 240, 25))
        assert out.shape == (1, 1, 4000)

    @pytest.mark.parametrize("t", [1, 2, 3, 7, 16, 64])
    def test_length_law_range(self, t):
        torch.manual_seed(3)
        gen = Generator(toy_vocoder_config())
        out = gen(torch.randn(1, 6, t))
        assert out.shape == (1, 1, gen.total_upsample * t)

    def test_amplitude_bound(self):
        torch.manual_seed(4)
        gen = Generator(toy_vocoder_config())
        out = gen(torch.randn(2, 6, 11) * 10)
        assert out.abs().max().item() <= 1.0

    def test_causality_probe_sample_granularity(self):
        torch.manual_seed(5)
        gen = Generator(toy_vocoder_config())
        rate = gen.total_upsample
        x = torch.randn(1, 6, 12)
        base = gen(x)
        for t in (0, 5, 11):
            bumped = x.clone()
            bumped[:, :, t] += 1.0
            out = gen(bumped)
            assert torch.equal(out[:, :, : rate * t], base[:, :, : rate * t])
            assert not torch.equal(out[:, :, rate * t :], base[:, :, rate * t :])

    def test_deterministic(self):
        torch.manual_seed(6)
        gen = Generator(toy_vocoder_config())
        x = torch.randn(1, 6, 5)
        assert torch.equal(gen(x), gen(x))

    def test_wrong_channel_count(self):
        gen = Generator(toy_vocoder_config())
        with pytest.raises(ShapeError):
            gen(torch.randn(1, 5, 4))

    def test_parameter_gradcheck_toy(self):
        torch.manual_seed(7)
        cfg = VocoderConfig(
            base_channels=8,
            upsample_rates=(2, 2),
            upsample_kernels=(4, 4),
            resblock_kernels=(3,),
            resblock_dilations=((1, 1),),
            input_channels=4,
        )
        gen = Generator(cfg).double()
        x = torch.randn(1, 4, 4, dtype=torch.float64)
        target = torch.randn(1, 1, 16, dtype=torch.float64)

        def loss_fn():
            return ((gen(x) - target) ** 2).sum()

        params = list(gen.parameters())
        analytic, numeric = finite_difference_param_grads(
            loss_fn, params, eps=1e-6, max_entries=3
        )
        assert relative_grad_error(analytic, numeric) < 1e-3
