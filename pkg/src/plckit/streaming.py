"""Long-burst fades and the packet-by-packet streaming session.

Losses longer than the conceal limit are faded out with a smoothstep ramp,
held at digital silence until the burst ends, and faded back in over the
first received audio.  The streaming session feeds 20 ms packets through
the model with per-layer caches and applies the identical fade envelope
incrementally, so streamed output matches offline inference.
"""

from __future__ import annotations

import numpy as np
import torch

from . import dsp
from .config import FadePolicy
from .dsp import AudioClip, ShapeError
from .layers import StreamState
from .model import PLCModel
from .traces import FRAME_SAMPLES, PACKET_SAMPLES, FrameLossMap, run_lengths

SAMPLES_PER_MS = 16


class SessionError(RuntimeError):
    """Malformed packet pushed into a streaming session."""


def smoothstep(t):
    """3t^2 - 2t^3 with the argument clamped to [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    return 3.0 * t * t - 2.0 * t * t * t


def _bursts(frame_flags: np.ndarray) -> list[tuple[int, int]]:
    """(start_frame, end_frame) pairs of maximal loss runs, end exclusive."""
    flags = np.asarray(frame_flags).astype(bool)
    if not flags.any():
        return []
    padded = np.concatenate([[False], flags, [False]]).astype(np.int8)
    edges = np.diff(padded)
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def fade_envelope(frame_flags: np.ndarray, num_samples: int,
                  policy: FadePolicy | None = None) -> np.ndarray:
    """Per-sample gain implementing the long-burst fade policy.

    For each loss burst strictly longer than the conceal limit: gain stays 1
    for the first conceal_limit_ms, falls to 0 over a smoothstep ramp of
    fade_out_ms, holds 0 until the burst ends, then rises over fade_in_ms
    into the first received audio.  Everything else keeps gain exactly 1.
    """
    policy = policy or FadePolicy()
    gain = np.ones(num_samples)
    limit_frames = policy.conceal_limit_ms // 10
    out_len = policy.fade_out_ms * SAMPLES_PER_MS
    in_len = policy.fade_in_ms * SAMPLES_PER_MS
    for start_f, end_f in _bursts(frame_flags):
        if end_f - start_f <= limit_frames:
            continue
        t0 = (start_f + limit_frames) * FRAME_SAMPLES
        burst_end = end_f * FRAME_SAMPLES
        if out_len > 0:
            idx = np.arange(t0, min(t0 + out_len, num_samples))
            gain[idx] *= 1.0 - smoothstep((idx - t0 + 1) / out_len)
        zero_lo, zero_hi = t0 + out_len, min(burst_end, num_samples)
        if zero_hi > zero_lo:
            gain[zero_lo:zero_hi] = 0.0
        resume = max(burst_end, t0 + out_len)
        if in_len > 0:
            idx = np.arange(resume, min(resume + in_len, num_samples))
            gain[idx] *= smoothstep((idx - resume + 1) / in_len)
    return gain


def apply_fade(wave: np.ndarray | AudioClip, lossmap: FrameLossMap | np.ndarray,
               policy: FadePolicy | None = None) -> np.ndarray | AudioClip:
    """Apply the long-burst fade envelope; untouched samples stay bit-exact."""
    clip_in = isinstance(wave, AudioClip)
    samples = wave.samples if clip_in else np.asarray(wave, dtype=np.float64)
    flags = lossmap.frame_flags if isinstance(lossmap, FrameLossMap) else np.asarray(lossmap)
    if len(samples) > len(flags) * FRAME_SAMPLES:
        raise ShapeError(
            f"{len(samples)} samples need {-(-len(samples) // FRAME_SAMPLES)} "
            f"loss-map frames, got {len(flags)}"
        )
    gain = fade_envelope(flags, len(samples), policy)
    out = samples.copy()
    touched = gain != 1.0
    out[touched] = samples[touched] * gain[touched]
    return AudioClip(out) if clip_in else out


class _FadeMachine:
    """Incremental twin of :func:`fade_envelope`, one frame at a time.

    Tracks at most one pending fade-out profile (set the moment a burst
    exceeds the conceal limit) and one pending fade-in window (set the
    moment that burst ends); their sample windows never overlap the next
    burst's, so single slots suffice.
    """

    def __init__(self, policy: FadePolicy):
        self.policy = policy
        self.limit_frames = policy.conceal_limit_ms // 10
        self.out_len = policy.fade_out_ms * SAMPLES_PER_MS
        self.in_len = policy.fade_in_ms * SAMPLES_PER_MS
        self.reset()

    def reset(self):
        self.frame_index = 0
        self.burst_len = 0
        self.in_long_burst = False
        self.out_t0: int | None = None  # absolute sample where the ramp starts
        self.in_resume: int | None = None  # absolute sample where fade-in starts

    def gain_for_frame(self, lost: bool) -> np.ndarray:
        sample0 = self.frame_index * FRAME_SAMPLES
        idx = np.arange(sample0, sample0 + FRAME_SAMPLES)
        gain = np.ones(FRAME_SAMPLES)

        if lost:
            self.burst_len += 1
            if self.burst_len > self.limit_frames and not self.in_long_burst:
                self.in_long_burst = True
                self.out_t0 = sample0
                self.in_resume = None
        else:
            if self.in_long_burst:
                self.in_resume = max(sample0, self.out_t0 + self.out_len)
                self.in_long_burst = False
            self.burst_len = 0

        if self.out_t0 is not None:
            t0 = self.out_t0
            if self.out_len > 0:
                falling = (idx >= t0) & (idx < t0 + self.out_len)
                gain[falling] *= 1.0 - smoothstep((idx[falling] - t0 + 1) / self.out_len)
            silent_until = self.in_resume if self.in_resume is not None else idx[-1] + 1
            gain[(idx >= t0 + self.out_len) & (idx < silent_until)] = 0.0
        if self.in_resume is not None and self.in_len > 0:
            r0 = self.in_resume
            rising = (idx >= r0) & (idx < r0 + self.in_len)
            gain[rising] *= smoothstep((idx[rising] - r0 + 1) / self.in_len)

        if self.in_resume is not None and sample0 + FRAME_SAMPLES >= self.in_resume + self.in_len:
            self.out_t0 = None
            self.in_resume = None

        self.frame_index += 1
        return gain


class StreamSession:
    """Causal packet-by-packet concealment with per-layer model caches.

    Push 20 ms packets in order; each push returns the 320 concealed samples
    covering that packet.  The model resynthesizes received audio too, so
    the output is never a byte copy of the input.
    """

    def __init__(self, model: PLCModel, policy: FadePolicy | None = None):
        self.model = model
        self.policy = policy or FadePolicy()
        self.model.eval()
        self.reset()

    def reset(self) -> None:
        """Drop all caches; subsequent output is independent of past packets."""
        self.state: StreamState = {}
        self._sample_tail = np.zeros(dsp.WINDOW - dsp.HOP)
        self._fade = _FadeMachine(self.policy)
        self._window = dsp.sqrt_hann_window()
        self.packets_pushed = 0

    def push_packet(self, samples: np.ndarray | None, lost: bool = False) -> np.ndarray:
        """One 320-sample packet (or a loss marker) in, 320 samples out."""
        if lost or samples is None:
            samples = np.zeros(PACKET_SAMPLES)
            lost = True
        else:
            samples = np.asarray(samples, dtype=np.float64)
            if samples.shape != (PACKET_SAMPLES,):
                raise SessionError(
                    f"packet must hold exactly {PACKET_SAMPLES} samples, "
                    f"got shape {tuple(samples.shape)}"
                )
            if not np.all(np.isfinite(samples)):
                raise SessionError("packet contains non-finite samples")

        specs = []
        for half in (samples[:dsp.HOP], samples[dsp.HOP:]):
            frame = np.concatenate([self._sample_tail, half]) * self._window
            specs.append(np.fft.rfft(frame, n=dsp.FFT_SIZE))
            self._sample_tail = half
        spec = np.stack(specs)  # (2 frames, F)
        cspec = dsp.power_compress(spec, self.model.cfg.compression)

        x = torch.from_numpy(cspec[None]).float()
        lm = torch.full((1, 2), float(lost))
        with torch.no_grad():
            wave = self.model(x, lm, self.state)[0, 0].numpy().astype(np.float64)

        gain = np.concatenate([
            self._fade.gain_for_frame(lost),
            self._fade.gain_for_frame(lost),
        ])
        self.packets_pushed += 1
        return wave * gain

    def push_pcm16(self, payload: bytes | None) -> np.ndarray:
        """Packet as raw little-endian PCM16 bytes; None marks a lost packet."""
        if payload is None:
            return self.push_packet(None, lost=True)
        if len(payload) != 2 * PACKET_SAMPLES:
            raise SessionError(
                f"PCM16 packet must be {2 * PACKET_SAMPLES} bytes, got {len(payload)}"
            )
        pcm = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
        return self.push_packet(pcm)
