"""Objective evaluation: mel cepstral distortion, burst-length trace
categories, baseline concealers, and corpus-level reports.

MCD uses 13 mel cepstra (c1..c13, c0 excluded so global gain cancels) from
a 40-band HTK-style filterbank over 25 ms / 10 ms frames, compared at equal
frame indices (concealment preserves timing, so no DTW).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import dsp
from .dsp import AudioClip, ParameterError
from .mel import dct_matrix, mel_filterbank
from .traces import (
    PACKET_SAMPLES,
    FrameLossMap,
    PacketTrace,
    apply_trace,
    max_burst_ms,
    read_trace,
    run_lengths,
)

MCD_FRAME = 400  # 25 ms
MCD_HOP = 160  # 10 ms
MCD_FFT = 512
MCD_BANDS = 40
MCD_COEFFS = 13
_LOG_FLOOR = 1e-10

CATEGORY_EDGES_MS = (120, 220, 1000)
CATEGORIES = ("0-120", "120-220", "220-1000")

ConcealFn = Callable[[AudioClip, FrameLossMap, PacketTrace], AudioClip]


class LengthError(ValueError):
    """Clip too short for at least one analysis frame."""


def _mel_cepstra(samples: np.ndarray) -> np.ndarray:
    """(num_frames, 13) cepstra c1..c13 from 25 ms / 10 ms power spectra."""
    if len(samples) < MCD_FRAME:
        raise LengthError(f"need at least {MCD_FRAME} samples, got {len(samples)}")
    n = 1 + (len(samples) - MCD_FRAME) // MCD_HOP
    idx = np.arange(MCD_FRAME)[None, :] + MCD_HOP * np.arange(n)[:, None]
    window = np.hanning(MCD_FRAME)
    spectra = np.abs(np.fft.rfft(samples[idx] * window, n=MCD_FFT, axis=1)) ** 2
    fb = mel_filterbank(MCD_BANDS, MCD_FFT)
    log_mel = np.log(np.maximum(spectra @ fb.T, _LOG_FLOOR))
    dct = dct_matrix(MCD_COEFFS + 1, MCD_BANDS)
    return log_mel @ dct[1:].T


def mcd(ref: AudioClip, deg: AudioClip) -> float:
    """Mel cepstral distortion in dB, gain-invariant and symmetric."""
    if ref.sample_rate != deg.sample_rate:
        raise ParameterError("sample rates differ")
    n = min(len(ref), len(deg))
    c_ref = _mel_cepstra(ref.samples[:n])
    c_deg = _mel_cepstra(deg.samples[:n])
    dist = np.sqrt(2.0 * np.sum((c_ref - c_deg) ** 2, axis=1))
    return float((10.0 / np.log(10.0)) * dist.mean())


def categorize_trace(trace: PacketTrace) -> str:
    """Bucket by maximum burst: [0,120] / (120,220] / (220,1000] ms.

    Bursts beyond 1000 ms clamp into the last bucket.
    """
    burst = max_burst_ms(trace)
    if burst <= CATEGORY_EDGES_MS[0]:
        return CATEGORIES[0]
    if burst <= CATEGORY_EDGES_MS[1]:
        return CATEGORIES[1]
    return CATEGORIES[2]


CROSSFADE_SAMPLES = 40  # 2.5 ms


def baseline_conceal(lossy: AudioClip, lossmap: FrameLossMap,
                     mode: str = "zero") -> AudioClip:
    """Trivial concealers for comparison.

    zero: return the (already zero-filled) input unchanged.
    repeat_last_packet: tile the last received 20 ms across each burst,
    phase-aligned, with 2.5 ms linear crossfades at burst entry and exit.
    """
    if mode == "zero":
        return AudioClip(lossy.samples.copy())
    if mode != "repeat_last_packet":
        raise ParameterError(f"unknown baseline mode {mode!r}")

    out = lossy.samples.copy()
    flags = np.asarray(lossmap.frame_flags)
    packet_flags = flags[::2]
    n = len(out)
    for start_p, end_p in _packet_bursts(packet_flags):
        lo = start_p * PACKET_SAMPLES
        hi = min(end_p * PACKET_SAMPLES, n)
        if lo >= n or lo < PACKET_SAMPLES:
            continue  # no history to repeat
        packet = lossy.samples[lo - PACKET_SAMPLES : lo]
        fill = np.tile(packet, -(-(hi - lo) // PACKET_SAMPLES))[: hi - lo]
        ramp = np.arange(1, CROSSFADE_SAMPLES + 1) / CROSSFADE_SAMPLES
        k = min(CROSSFADE_SAMPLES, hi - lo)
        edge = lossy.samples[lo - 1]
        fill[:k] = (1.0 - ramp[:k]) * edge + ramp[:k] * fill[:k]
        out[lo:hi] = fill
        k = min(CROSSFADE_SAMPLES, n - hi)
        if k > 0:
            cont = np.tile(packet, 2)[(hi - lo) % PACKET_SAMPLES :][:k]
            out[hi : hi + k] = (1.0 - ramp[:k]) * cont + ramp[:k] * out[hi : hi + k]
    return AudioClip(out)


def _packet_bursts(packet_flags: np.ndarray) -> list[tuple[int, int]]:
    flags = np.asarray(packet_flags).astype(bool)
    if not flags.any():
        return []
    padded = np.concatenate([[False], flags, [False]]).astype(np.int8)
    edges = np.diff(padded)
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


@dataclass
class EvalReport:
    """Per-utterance MCD rows plus per-category and overall aggregates."""

    rows: list[dict] = field(default_factory=list)
    aggregates: dict[str, dict[str, float]] = field(default_factory=dict)
    missing: list[str] = field(default_factory=list)

    def overall(self, system: str) -> float:
        return self.aggregates[system]["overall"]


def evaluate_corpus(
    ref_dir: str | Path,
    systems: dict[str, ConcealFn],
    traces_dir: str | Path,
    out_dir: str | Path | None = None,
) -> EvalReport:
    """Run every concealer over matched (wav, trace) pairs and score MCD.

    Pairs match by file stem: ref_dir/x.wav with traces_dir/x.txt.  Unpaired
    files are listed in the report and excluded from aggregates.  When
    out_dir is given, writes report.csv, summary.csv, and a WAV tree
    out_dir/<system>/<utterance>.wav ready for external scoring tools.
    """
    ref_dir, traces_dir = Path(ref_dir), Path(traces_dir)
    report = EvalReport()
    wavs = sorted(ref_dir.glob("*.wav"))
    concealed: dict[str, dict[str, AudioClip]] = {name: {} for name in systems}

    for wav_path in wavs:
        trace_path = traces_dir / (wav_path.stem + ".txt")
        if not trace_path.exists():
            report.missing.append(wav_path.stem)
            continue
        ref = dsp.read_wav(wav_path)
        trace = read_trace(trace_path)
        lossy, lossmap = apply_trace(ref, trace)
        burst = max_burst_ms(trace)
        category = categorize_trace(trace)
        for name, fn in systems.items():
            out = fn(lossy, lossmap, trace)
            concealed[name][wav_path.stem] = out
            report.rows.append({
                "utterance": wav_path.stem,
                "system": name,
                "max_burst_ms": burst,
                "category": category,
                "mcd_db": mcd(ref, out),
            })

    for name in systems:
        rows = [r for r in report.rows if r["system"] == name]
        agg = {"overall": float(np.mean([r["mcd_db"] for r in rows])) if rows else float("nan")}
        for cat in CATEGORIES:
            cat_rows = [r["mcd_db"] for r in rows if r["category"] == cat]
            agg[cat] = float(np.mean(cat_rows)) if cat_rows else float("nan")
        report.aggregates[name] = agg

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.csv", "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["utterance", "system", "max_burst_ms", "category", "mcd_db"]
            )
            writer.writeheader()
            writer.writerows(report.rows)
        with open(out_dir / "summary.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["system", "scope", "mcd_db"])
            writer.writeheader()
            for name, agg in report.aggregates.items():
                writer.writerow({"system": name, "scope": "overall", "mcd_db": agg["overall"]})
                for cat in CATEGORIES:
                    writer.writerow({"system": name, "scope": cat, "mcd_db": agg[cat]})
        for name, clips in concealed.items():
            system_dir = out_dir / name
            system_dir.mkdir(exist_ok=True)
            for stem, clip in clips.items():
                dsp.write_wav(system_dir / f"{stem}.wav", clip)
    return report
