import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plckit import dsp


def naive_frame_count(n, hop=160):
    count = 0
    while count * hop < n:
        count += 1
    return max(count, 0)


def naive_windowed_dft(frame):
    """Direct O(N^2) DFT of one windowed frame."""
    n = len(frame)
    w = dsp.sqrt_hann_window(n)
    x = frame * w
    bins = n // 2 + 1
    out = np.zeros(bins, dtype=complex)
    for k in range(bins):
        out[k] = np.sum(x * np.exp(-2j * np.pi * k * np.arange(n) / n))
    return out


class TestWavIO:
    def test_read_parses_sample_count(self, tmp_path):
        clip = dsp.AudioClip(np.linspace(-0.5, 0.5, 320))
        dsp.write_wav(tmp_path / "a.wav", clip)
        back = dsp.read_wav(tmp_path / "a.wav")
        assert len(back) == 320
        assert back.sample_rate == 16000

    def test_write_read_roundtrip_bytes(self, tmp_path, rng):
        pcm = rng.integers(-32768, 32768, size=1000).astype("<i2")
        clip = dsp.AudioClip(pcm.astype(np.float64) / 32768.0)
        dsp.write_wav(tmp_path / "a.wav", clip)
        first = (tmp_path / "a.wav").read_bytes()
        dsp.write_wav(tmp_path / "b.wav", dsp.read_wav(tmp_path / "a.wav"))
        second = (tmp_path / "b.wav").read_bytes()
        assert first == second

    def test_wrong_rate_and_channels_rejected(self, tmp_path):
        import wave

        path = tmp_path / "bad.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(44100)
            wf.writeframes(b"\x00\x00" * 64)
        with pytest.raises(dsp.FormatError, match="sample_rate"):
            dsp.read_wav(path)

    def test_wrong_depth_rejected(self, tmp_path):
        import wave

        path = tmp_path / "bad.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(1)
            wf.setframerate(16000)
            wf.writeframes(b"\x00" * 64)
        with pytest.raises(dsp.FormatError, match="bit_depth"):
            dsp.read_wav(path)


class TestStft:
    def test_frame_count_1600_samples(self):
        assert dsp.stft(np.ones(1600)).shape == (10, 161)

    @pytest.mark.parametrize("n", [1, 159, 160, 161, 1600, 4001])
    def test_frame_count_matches_naive_enumeration(self, n):
        assert dsp.stft(np.ones(n)).shape[0] == naive_frame_count(n)
        assert dsp.num_frames(n) == naive_frame_count(n)

    def test_zero_clip_zero_spectrogram(self):
        assert np.all(dsp.stft(np.zeros(1000)) == 0)

    def test_empty_clip_rejected(self):
        with pytest.raises(dsp.InvalidInputError):
            dsp.stft(np.zeros(0))

    def test_sine_energy_at_expected_bin(self):
        t = np.arange(3200) / 16000
        x = np.sin(2 * np.pi * 1000 * t)
        spec = dsp.stft(x)
        # steady-state frame away from the padded edge
        frame = np.abs(spec[10])
        assert frame.argmax() == round(1000 * 320 / 16000) == 20

    def test_matches_naive_dft_per_frame(self, rng):
        x = rng.standard_normal(800)
        spec = dsp.stft(x)
        # frame 3 covers samples [320, 640) after the 160-sample left pad
        segment = x[3 * 160 - 160 : 3 * 160 + 160]
        np.testing.assert_allclose(spec[3], naive_windowed_dft(segment), atol=1e-9)

    def test_causal_framing(self, rng):
        x = rng.standard_normal(3200)
        spec = dsp.stft(x)
        for t in (0, 3, 10):
            y = x.copy()
            y[t * 160 + 160 :] = 0.0
            np.testing.assert_array_equal(dsp.stft(y)[: t + 1], spec[: t + 1])


class TestIstft:
    def test_roundtrip_one_second(self, rng):
        x = rng.standard_normal(16000)
        rec = dsp.istft(dsp.stft(x), length=len(x)).samples
        v = dsp.valid_length(len(x))
        err = np.linalg.norm(rec[:v] - x[:v]) / np.linalg.norm(x[:v])
        assert err < 1e-6

    @pytest.mark.parametrize("n", [321, 1000, 1600, 8000])
    def test_roundtrip_odd_lengths(self, rng, n):
        x = rng.standard_normal(n)
        rec = dsp.istft(dsp.stft(x), length=n).samples
        v = dsp.valid_length(n)
        err = np.linalg.norm(rec[:v] - x[:v]) / np.linalg.norm(x[:v])
        assert err < 1e-6

    def test_zero_spectrogram_zero_clip(self):
        out = dsp.istft(np.zeros((5, 161), dtype=complex))
        assert len(out) == 800
        assert np.all(out.samples == 0)

    def test_single_frame_overlap_add_is_windowed_ifft(self, rng):
        spec = rng.standard_normal(161) + 1j * rng.standard_normal(161)
        spec = spec[None, :]
        buf = dsp.overlap_add(spec)
        assert len(buf) == 320  # window length, tapered at both edges
        expected = np.fft.irfft(spec[0], n=320) * dsp.sqrt_hann_window()
        np.testing.assert_allclose(buf, expected, atol=1e-12)
        assert abs(buf[0]) < 1e-12  # sqrt-Hann start taper

    def test_wrong_bin_count_rejected(self):
        with pytest.raises(dsp.ShapeError):
            dsp.istft(np.zeros((4, 160), dtype=complex))


class TestPowerCompression:
    def test_unit_magnitude_fixed_point(self):
        spec = np.exp(1j * np.linspace(0, 3, 12)).reshape(3, 4)
        spec = np.pad(spec, ((0, 0), (0, 157)), constant_values=1.0)
        c = dsp.power_compress(spec, 0.3)
        np.testing.assert_allclose(np.hypot(c[0], c[1]), 1.0, atol=1e-12)

    def test_zero_maps_to_zero(self):
        c = dsp.power_compress(np.zeros((2, 161), dtype=complex), 0.3)
        assert np.all(c == 0)

    def test_magnitude_four_p_03(self):
        spec = np.full((1, 161), 4.0 + 0j)
        c = dsp.power_compress(spec, 0.3)
        np.testing.assert_allclose(np.hypot(c[0], c[1]), 4.0**0.3, rtol=1e-12)
        assert abs(4.0**0.3 - 1.5157) < 1e-3

    @pytest.mark.parametrize("p", [0.3, 0.5, 1.0])
    def test_roundtrip(self, rng, p):
        spec = rng.standard_normal((6, 161)) + 1j * rng.standard_normal((6, 161))
        back = dsp.power_expand(dsp.power_compress(spec, p), p)
        assert np.abs(back - spec).max() / np.abs(spec).max() < 1e-6

    def test_phase_preserved(self, rng):
        spec = rng.standard_normal((4, 161)) + 1j * rng.standard_normal((4, 161))
        back = dsp.power_expand(dsp.power_compress(spec, 0.3), 0.3)
        mask = np.abs(spec) > 1e-9
        np.testing.assert_allclose(np.angle(back[mask]), np.angle(spec[mask]), atol=1e-9)

    def test_invalid_exponent(self):
        with pytest.raises(dsp.ParameterError):
            dsp.power_compress(np.zeros((1, 161), dtype=complex), 0.0)
        with pytest.raises(dsp.ParameterError):
            dsp.power_compress(np.zeros((1, 161), dtype=complex), -0.3)

    @settings(max_examples=25, deadline=None)
    @given(
        p=st.floats(min_value=0.1, max_value=1.0),
        seed=st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_roundtrip_property(self, p, seed):
        gen = np.random.default_rng(seed)
        spec = gen.standard_normal((2, 161)) + 1j * gen.standard_normal((2, 161))
        back = dsp.power_expand(dsp.power_compress(spec, p), p)
        assert np.abs(back - spec).max() / np.abs(spec).max() < 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31 - 1),
       n=st.integers(min_value=400, max_value=4000))
def test_roundtrip_random_lengths(seed, n):
    gen = np.random.default_rng(seed)
    x = gen.standard_normal(n)
    rec = dsp.istft(dsp.stft(x), length=n).samples
    v = dsp.valid_length(n)
    assert np.linalg.norm(rec[:v] - x[:v]) / np.linalg.norm(x[:v]) < 1e-6
