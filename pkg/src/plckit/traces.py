"""Packet-loss trace generation, file I/O, and application to audio.

A packet covers 20 ms (320 samples at 16 kHz) and expands to two 10 ms
model frames.  Traces are binary: 0 = received, 1 = lost.  Trace files hold
one '0' or '1' per LF-terminated line, one line per packet.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import AudioClip, ParameterError

PACKET_MS = 20
PACKET_SAMPLES = 320
FRAME_SAMPLES = 160
FRAMES_PER_PACKET = 2
DEFAULT_MAX_BURST_PACKETS = 11  # 220 ms


class ParseError(ValueError):
    """Trace file contains something other than '0'/'1' lines."""


class CoverageError(ValueError):
    """Trace too short to cover the clip it is applied to."""


@dataclass
class PacketTrace:
    """Per-packet loss flags at 20 ms resolution."""

    packet_flags: np.ndarray

    def __post_init__(self):
        flags = np.asarray(self.packet_flags, dtype=np.uint8)
        if flags.ndim != 1:
            raise ParameterError(f"expected 1-D flags, got shape {flags.shape}")
        if flags.size and not np.isin(flags, (0, 1)).all():
            raise ParameterError("trace flags must be 0 or 1")
        self.packet_flags = flags

    def __len__(self) -> int:
        return len(self.packet_flags)

    @property
    def loss_rate(self) -> float:
        return float(self.packet_flags.mean()) if len(self) else 0.0


@dataclass
class FrameLossMap:
    """Per-frame loss flags at 10 ms resolution (2 frames per packet)."""

    frame_flags: np.ndarray

    def __post_init__(self):
        self.frame_flags = np.asarray(self.frame_flags, dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.frame_flags)


@dataclass
class MarkovModel:
    """Three-state (GOOD, LOSSY, BURST) packet loss channel."""

    transition_matrix: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [0.985, 0.015, 0.0],
                [0.20, 0.70, 0.10],
                [0.0, 0.25, 0.75],
            ]
        )
    )
    loss_prob_per_state: np.ndarray = field(
        default_factory=lambda: np.array([0.005, 0.25, 0.90])
    )

    def __post_init__(self):
        self.transition_matrix = np.asarray(self.transition_matrix, dtype=np.float64)
        self.loss_prob_per_state = np.asarray(self.loss_prob_per_state, dtype=np.float64)
        if self.transition_matrix.shape != (3, 3):
            raise ParameterError("transition matrix must be 3x3")
        if (self.transition_matrix < 0).any():
            raise ParameterError("transition probabilities must be >= 0")
        if not np.allclose(self.transition_matrix.sum(axis=1), 1.0, atol=1e-12):
            raise ParameterError("transition matrix rows must sum to 1")
        if self.loss_prob_per_state.shape != (3,):
            raise ParameterError("need one loss probability per state")
        if ((self.loss_prob_per_state < 0) | (self.loss_prob_per_state > 1)).any():
            raise ParameterError("loss probabilities must lie in [0, 1]")

    def stationary_distribution(self) -> np.ndarray:
        """Left eigenvector of the transition matrix for eigenvalue 1."""
        w, v = np.linalg.eig(self.transition_matrix.T)
        pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
        pi = np.abs(pi)
        return pi / pi.sum()

    def stationary_loss_rate(self) -> float:
        return float(self.stationary_distribution() @ self.loss_prob_per_state)


def _truncated_geometric_pmf(p: float, max_len: int) -> np.ndarray:
    k = np.arange(1, max_len + 1)
    pmf = (1.0 - p) ** (k - 1) * p
    return pmf / pmf.sum()


def gen_random_trace(
    num_packets: int,
    target_rate: float,
    max_burst_packets: int = DEFAULT_MAX_BURST_PACKETS,
    seed: int = 0,
    mean_burst_geom_p: float = 0.5,
) -> PacketTrace:
    """Random bounded-burst trace: alternating geometric loss/receive runs.

    Loss runs are truncated-geometric with cap ``max_burst_packets``; the
    receive-run mean is solved so the expected loss rate equals
    ``target_rate``.  No loss run ever exceeds the cap.
    """
    if num_packets < 1:
        raise ParameterError("num_packets must be >= 1")
    if not 0.0 <= target_rate <= 1.0:
        raise ParameterError(f"target_rate must lie in [0, 1], got {target_rate}")
    if max_burst_packets < 1:
        raise ParameterError("max_burst_packets must be >= 1")
    if target_rate == 0.0:
        return PacketTrace(np.zeros(num_packets, dtype=np.uint8))

    pmf = _truncated_geometric_pmf(mean_burst_geom_p, max_burst_packets)
    mean_loss_run = float(np.arange(1, max_burst_packets + 1) @ pmf)
    # r = L / (L + R)  =>  R = L (1 - r) / r; receive runs are geometric so
    # their mean must be >= 1, which caps the achievable rate at L / (L + 1).
    max_rate = mean_loss_run / (mean_loss_run + 1.0)
    if target_rate > max_rate:
        raise ParameterError(
            f"target_rate {target_rate} unreachable with max burst "
            f"{max_burst_packets} (limit {max_rate:.3f})"
        )
    mean_recv_run = mean_loss_run * (1.0 - target_rate) / target_rate
    p_recv = 1.0 / mean_recv_run

    rng = np.random.default_rng(seed)
    cdf = np.cumsum(pmf)
    flags = np.empty(num_packets, dtype=np.uint8)
    pos = 0
    lost = False
    while pos < num_packets:
        if lost:
            run = int(np.searchsorted(cdf, rng.random(), side="right")) + 1
        else:
            run = int(rng.geometric(p_recv))
        run = min(run, num_packets - pos)
        flags[pos : pos + run] = 1 if lost else 0
        pos += run
        lost = not lost
    return PacketTrace(flags)


def gen_markov_trace(num_packets: int, model: MarkovModel, seed: int = 0) -> PacketTrace:
    """Trace from a three-state Markov channel, starting in GOOD."""
    if num_packets < 1:
        raise ParameterError("num_packets must be >= 1")
    rng = np.random.default_rng(seed)
    state_u = rng.random(num_packets)
    loss_u = rng.random(num_packets)
    cdf = np.cumsum(model.transition_matrix, axis=1)
    loss_p = model.loss_prob_per_state
    flags = np.empty(num_packets, dtype=np.uint8)
    state = 0
    for i in range(num_packets):
        flags[i] = 1 if loss_u[i] < loss_p[state] else 0
        state = int(np.searchsorted(cdf[state], state_u[i], side="right"))
    return PacketTrace(flags)


def read_trace(path: str | Path) -> PacketTrace:
    flags = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            token = line.rstrip("\n").rstrip("\r")
            if token == "0":
                flags.append(0)
            elif token == "1":
                flags.append(1)
            else:
                raise ParseError(f"{path}:{lineno}: expected '0' or '1', got {token!r}")
    return PacketTrace(np.array(flags, dtype=np.uint8))


def write_trace(path: str | Path, trace: PacketTrace) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for flag in trace.packet_flags:
            fh.write(f"{int(flag)}\n")


def expand_to_frames(trace: PacketTrace) -> FrameLossMap:
    """Duplicate each 20 ms packet flag into two 10 ms frame flags."""
    return FrameLossMap(np.repeat(trace.packet_flags, FRAMES_PER_PACKET))


def apply_trace(clip: AudioClip, trace: PacketTrace) -> tuple[AudioClip, FrameLossMap]:
    """Zero out samples inside lost packets.

    Received samples pass through bit-exactly.  The returned loss map covers
    the clip's analysis frames, ceil(len / 160) flags.
    """
    n = len(clip)
    packets_needed = -(-n // PACKET_SAMPLES)
    if len(trace) < packets_needed:
        raise CoverageError(
            f"trace has {len(trace)} packets but clip needs {packets_needed}"
        )
    out = clip.samples.copy()
    for k in range(packets_needed):
        if trace.packet_flags[k]:
            out[k * PACKET_SAMPLES : (k + 1) * PACKET_SAMPLES] = 0.0
    t = -(-n // FRAME_SAMPLES)
    frame_flags = np.repeat(trace.packet_flags[:packets_needed], FRAMES_PER_PACKET)[:t]
    return AudioClip(out), FrameLossMap(frame_flags)


def run_lengths(flags: np.ndarray) -> np.ndarray:
    """Lengths of the runs of consecutive 1s."""
    flags = np.asarray(flags).astype(bool)
    if not flags.any():
        return np.array([], dtype=np.int64)
    padded = np.concatenate([[0], flags.view(np.uint8), [0]])
    edges = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return ends - starts


def max_burst_ms(trace: PacketTrace) -> int:
    """20 ms times the longest run of consecutive lost packets."""
    runs = run_lengths(trace.packet_flags)
    return PACKET_MS * int(runs.max()) if runs.size else 0
