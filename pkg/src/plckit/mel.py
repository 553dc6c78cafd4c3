"""Mel filterbank and orthonormal DCT-II matrices (HTK-style mel scale)."""

from __future__ import annotations

import numpy as np


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_bands: int, fft_size: int, sample_rate: int = 16000,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filterbank, shape (num_bands, fft_size // 2 + 1)."""
    fmax = fmax if fmax is not None else sample_rate / 2
    mel_edges = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_bands + 2)
    hz_edges = mel_to_hz(mel_edges)
    bins = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)
    fb = np.zeros((num_bands, len(bins)))
    for b in range(num_bands):
        lo, mid, hi = hz_edges[b], hz_edges[b + 1], hz_edges[b + 2]
        rising = (bins - lo) / max(mid - lo, 1e-12)
        falling = (hi - bins) / max(hi - mid, 1e-12)
        fb[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def dct_matrix(num_coeffs: int, num_inputs: int) -> np.ndarray:
    """Orthonormal DCT-II matrix, shape (num_coeffs, num_inputs)."""
    n = np.arange(num_inputs)
    k = np.arange(num_coeffs)[:, None]
    mat = np.cos(np.pi * (n + 0.5) * k / num_inputs) * np.sqrt(2.0 / num_inputs)
    mat[0] /= np.sqrt(2.0)
    return mat
