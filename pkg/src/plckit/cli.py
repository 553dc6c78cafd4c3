"""Command-line interface binding the whole pipeline together.

Subcommands: simulate (loss traces), apply (zero-fill audio + loss maps),
pretrain (contrastive stage), train (adversarial stage), infer (conceal one
file), eval (score systems over a corpus).  Values resolve with precedence
flags > config file > preset defaults; every command is deterministic under
a fixed --seed.  PLC_NUM_WORKERS=0 pins torch to one thread for strict
reproducibility.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dsp, metrics, traces, training
from .config import ConfigError, RunConfig
from .model import conceal
from .streaming import StreamSession


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = config_mod.load_config(args.config)
    else:
        cfg = config_mod.PRESETS[args.preset]()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"mode": args.markov or "random", "num_packets": args.num_packets,
                "seed": args.seed if args.seed is not None else 0, "traces": []}
    base_seed = manifest["seed"]
    model = traces.MarkovModel() if args.markov else None
    for i in range(args.num_traces):
        seed = base_seed + i
        if model is not None:
            trace = traces.gen_markov_trace(args.num_packets, model, seed=seed)
            params = {"markov": args.markov}
        else:
            trace = traces.gen_random_trace(
                args.num_packets, args.rate, args.max_burst, seed=seed)
            params = {"rate": args.rate, "max_burst": args.max_burst}
        name = f"trace_{i:04d}.txt"
        traces.write_trace(out / name, trace)
        manifest["traces"].append({"file": name, "seed": seed, **params})
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {args.num_traces} trace(s) to {out}")
    return 0


def cmd_apply(args) -> int:
    wav_dir, trace_dir, out = Path(args.wavs), Path(args.traces), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    errors = []
    processed = 0
    for wav_path in sorted(wav_dir.glob("*.wav")):
        trace_path = trace_dir / (wav_path.stem + ".txt")
        if not trace_path.exists():
            errors.append(f"{wav_path.stem}: no trace file {trace_path.name}")
            continue
        try:
            clip = dsp.read_wav(wav_path)
            trace = traces.read_trace(trace_path)
            lossy, lossmap = traces.apply_trace(clip, trace)
        except (dsp.FormatError, traces.ParseError, traces.CoverageError) as exc:
            errors.append(f"{wav_path.stem}: {exc}")
            continue
        dsp.write_wav(out / wav_path.name, lossy)
        with open(out / f"{wav_path.stem}.lossmap.txt", "w", encoding="ascii") as fh:
            for flag in lossmap.frame_flags:
                fh.write(f"{int(flag)}\n")
        processed += 1
    for line in errors:
        print(f"error: {line}", file=sys.stderr)
    print(f"applied traces to {processed} file(s)")
    return 0 if processed and not errors else (1 if errors else 0)


def cmd_pretrain(args) -> int:
    cfg = _load_run_config(args)
    corpus = training.load_corpus(args.corpus)
    _, rows = training.train_stage1(corpus, cfg, out_dir=args.out, steps=args.steps)
    last = rows[-1]["total"] if rows else float("nan")
    print(f"pretraining done: {len(rows)} step(s), final loss {last:.4f}; "
          f"checkpoint at {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    corpus = training.load_corpus(args.corpus)
    _, _, rows = training.train_stage2(
        corpus, cfg, args.pretrained, out_dir=args.out, steps=args.steps)
    last = rows[-1]["g_total"] if rows else float("nan")
    print(f"adversarial training done: {len(rows)} step(s), final generator "
          f"loss {last:.4f}; checkpoint at {args.out}")
    return 0


def cmd_infer(args) -> int:
    model = training.load_model(args.checkpoint)
    clip = dsp.read_wav(args.input)
    trace = traces.read_trace(args.trace)
    lossy, lossmap = traces.apply_trace(clip, trace)
    policy = None if args.no_fade else model.cfg.fade
    if args.streaming:
        session = StreamSession(model, policy)
        chunks = []
        for k in range(len(lossy) // traces.PACKET_SAMPLES):
            seg = lossy.samples[k * traces.PACKET_SAMPLES:(k + 1) * traces.PACKET_SAMPLES]
            lost = bool(trace.packet_flags[k])
            chunks.append(session.push_packet(None if lost else seg, lost=lost))
        out_clip = dsp.AudioClip(np.concatenate(chunks) if chunks else np.zeros(0))
    else:
        out_clip = conceal(model, lossy, lossmap, policy)
    dsp.write_wav(args.out, out_clip)
    print(f"concealed {args.input} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    systems: dict[str, metrics.ConcealFn] = {}
    for name in args.systems.split(","):
        name = name.strip()
        if name == "zero":
            systems[name] = lambda lossy, lm, tr: metrics.baseline_conceal(lossy, lm, "zero")
        elif name == "repeat":
            systems[name] = lambda lossy, lm, tr: metrics.baseline_conceal(
                lossy, lm, "repeat_last_packet")
        elif name == "model":
            if not args.checkpoint:
                raise ConfigError("system 'model' needs --checkpoint")
            model = training.load_model(args.checkpoint)
            policy = model.cfg.fade

            def run_model(lossy, lm, tr, _model=model, _policy=policy):
                return conceal(_model, lossy, lm, _policy)

            systems[name] = run_model
        else:
            raise ConfigError(f"unknown system {name!r}")
    report = metrics.evaluate_corpus(args.ref, systems, args.traces, args.out)
    for system, agg in report.aggregates.items():
        print(f"{system}: overall MCD {agg['overall']:.3f} dB "
              + " ".join(f"[{cat}] {agg[cat]:.3f}" for cat in metrics.CATEGORIES))
    for stem in report.missing:
        print(f"missing trace for {stem}; excluded", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plckit", description="Neural packet loss concealment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--preset", choices=sorted(config_mod.PRESETS), default="desk",
                       help="named defaults when no --config is given")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("simulate", help="generate packet loss traces")
    p.add_argument("--out", required=True)
    p.add_argument("--num-traces", type=int, default=1)
    p.add_argument("--num-packets", type=int, default=500)
    p.add_argument("--rate", type=float, default=0.3)
    p.add_argument("--max-burst", type=int, default=traces.DEFAULT_MAX_BURST_PACKETS)
    p.add_argument("--markov", choices=["wlan"], default=None,
                   help="use the named Markov channel instead of random bursts")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("apply", help="zero-fill audio according to traces")
    p.add_argument("--wavs", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("pretrain", help="stage 1: contrastive pretraining")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="stage 2: adversarial training")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--pretrained", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="conceal one utterance")
    p.add_argument("--input", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-fade", action="store_true")
    p.add_argument("--streaming", action="store_true",
                   help="run the packet-by-packet session instead of offline")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score concealment systems over a corpus")
    p.add_argument("--ref", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--systems", default="zero,repeat")
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, dsp.FormatError, dsp.ParameterError, dsp.InvalidInputError,
            traces.ParseError, traces.CoverageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
