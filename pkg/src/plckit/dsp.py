"""Waveform I/O and time-frequency transforms.

All audio is mono 16 kHz. The analysis framing is a 320-sample (20 ms)
square-root Hann window with a 160-sample (10 ms) hop and a 320-point FFT,
giving 161 frequency bins. The signal is left-padded by window - hop samples
so that frame ``t`` only depends on samples ``< t * hop + window - hop``
(causal framing), and right-padded with zeros to a whole number of hops,
``T = ceil(len / hop)`` frames.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WINDOW = 320
HOP = 160
FFT_SIZE = 320
NUM_BINS = FFT_SIZE // 2 + 1  # 161
DEFAULT_COMPRESSION = 0.3


class FormatError(ValueError):
    """WAV container violates the mono / 16-bit / 16 kHz contract."""


class InvalidInputError(ValueError):
    """Operation received an empty or non-finite input."""


class ParameterError(ValueError):
    """Parameter outside its documented range."""


class ShapeError(ValueError):
    """Array shape incompatible with the module framing."""


@dataclass
class AudioClip:
    """Mono PCM audio, samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError(f"expected 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise FormatError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("samples must be finite")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path: str | Path) -> AudioClip:
    """Read a RIFF/WAVE file; must be 16-bit PCM, mono, 16 kHz.

    Samples are scaled to [-1, 1) by 1/32768.
    """
    with wave.open(str(path), "rb") as wf:
        if wf.getframerate() != SAMPLE_RATE:
            raise FormatError(f"sample_rate: expected {SAMPLE_RATE}, got {wf.getframerate()}")
        if wf.getnchannels() != 1:
            raise FormatError(f"channels: expected 1, got {wf.getnchannels()}")
        if wf.getsampwidth() != 2:
            raise FormatError(f"bit_depth: expected 16-bit, got {8 * wf.getsampwidth()}-bit")
        raw = wf.readframes(wf.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM mono 16 kHz, little-endian.

    Values are scaled by 32768, rounded to nearest and clipped to the int16
    range, so write(read(f)) reproduces f's data chunk bytes exactly.
    """
    pcm = np.clip(np.rint(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())


def sqrt_hann_window(n: int = WINDOW) -> np.ndarray:
    """Square-root periodic Hann; satisfies COLA at 50% overlap."""
    hann = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))
    return np.sqrt(hann)


def num_frames(num_samples: int) -> int:
    """T = ceil(len / hop)."""
    return -(-num_samples // HOP)


def _framed(samples: np.ndarray) -> np.ndarray:
    """Left-pad by window - hop, right-pad to T hops, return (T, WINDOW) frames."""
    t = num_frames(len(samples))
    padded = np.concatenate([
        np.zeros(WINDOW - HOP, dtype=samples.dtype),
        samples,
        np.zeros(t * HOP - len(samples), dtype=samples.dtype),
    ])
    idx = np.arange(WINDOW)[None, :] + HOP * np.arange(t)[:, None]
    return padded[idx]


def stft(clip: AudioClip | np.ndarray) -> np.ndarray:
    """Complex spectrogram of shape (T, 161), causal framing.

    Frame ``t`` is a function of samples ``[0, t*160 + 160)`` only.
    """
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    if len(samples) < 1:
        raise InvalidInputError("cannot transform an empty clip")
    frames = _framed(samples) * sqrt_hann_window()
    return np.fft.rfft(frames, n=FFT_SIZE, axis=1)


def overlap_add(spec: np.ndarray) -> np.ndarray:
    """Raw synthesis buffer: inverse FFT per frame, sqrt-Hann synthesis window,
    overlap-add at the hop.  Length is (T-1)*160 + 320; the buffer starts at
    the left analysis pad, so original sample n sits at buffer index n + 160.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != NUM_BINS:
        raise ShapeError(f"expected (T, {NUM_BINS}) spectrogram, got {spec.shape}")
    t = spec.shape[0]
    frames = np.fft.irfft(spec, n=FFT_SIZE, axis=1) * sqrt_hann_window()
    out = np.zeros((t - 1) * HOP + WINDOW, dtype=np.float64)
    for i in range(t):
        out[i * HOP : i * HOP + WINDOW] += frames[i]
    return out


def istft(spec: np.ndarray, length: int | None = None) -> AudioClip:
    """Inverse transform aligned to the original signal.

    Strips the analysis pad and returns 160*T samples, or ``length`` samples
    when given.  Reconstruction is exact (up to FFT round-off) on the region
    with full window coverage, i.e. the first 160*(T-1) samples.
    """
    buf = overlap_add(spec)[WINDOW - HOP :]
    t = np.asarray(spec).shape[0]
    out = buf[: HOP * t]
    if length is not None:
        if length > len(out):
            raise ShapeError(f"requested length {length} exceeds synthesis span {len(out)}")
        out = out[:length]
    return AudioClip(out.copy())


def valid_length(num_samples: int) -> int:
    """Sample count over which istft(stft(x)) reconstructs x exactly."""
    return min(num_samples, HOP * (num_frames(num_samples) - 1))


def power_compress(spec: np.ndarray, p: float = DEFAULT_COMPRESSION) -> np.ndarray:
    """Power-law compress a complex spectrogram's magnitude.

    Returns shape (2, T, F) holding (|X|^p cos(phi), |X|^p sin(phi)).
    Zero magnitude maps to (0, 0).
    """
    if p <= 0:
        raise ParameterError(f"compression exponent must be > 0, got {p}")
    spec = np.asarray(spec)
    mag = np.abs(spec)
    scale = np.zeros_like(mag)
    nz = mag > 0
    scale[nz] = mag[nz] ** (p - 1.0)
    return np.stack([spec.real * scale, spec.imag * scale])


def power_expand(cspec: np.ndarray, p: float = DEFAULT_COMPRESSION) -> np.ndarray:
    """Inverse of :func:`power_compress`; expand(compress(S, p)) == S."""
    if p <= 0:
        raise ParameterError(f"compression exponent must be > 0, got {p}")
    cspec = np.asarray(cspec)
    if cspec.ndim != 3 or cspec.shape[0] != 2:
        raise ShapeError(f"expected (2, T, F) compressed spectrogram, got {cspec.shape}")
    re, im = cspec[0], cspec[1]
    cmag = np.hypot(re, im)
    scale = np.zeros_like(cmag)
    nz = cmag > 0
    scale[nz] = cmag[nz] ** (1.0 / p - 1.0)
    return (re + 1j * im) * scale
