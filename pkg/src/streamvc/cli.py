"""Command-line entry point: ``streamvc <command> ...``.

Every command exits 0 only after its outputs are written; library errors are
reported as a single ``error:`` line with exit status 1.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import audio, masking, model_io, pqmf
from .config import ALLOWED_CHUNK_MS, DEFAULT_HISTORY_CHUNKS, VOCODER_MODES, ModelConfig, RuntimeConfig
from .errors import InvalidRangeError, StreamVCError
from .vocoder import CrossfadeSpec

MODEL_ENV = "STREAMVC_MODEL"
DEFAULT_SEED = 0


def _history(text: str) -> Optional[int]:
    if text.lower() in ("inf", "none", "unlimited"):
        return None
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("history must be >= 0 or 'inf'")
    return value


def _chunk_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _threads(n: int):
    return threadpool_limits(n) if n > 0 else contextlib.nullcontext()


def _load_model(path: Optional[str]) -> model_io.Model:
    path = path or os.environ.get(MODEL_ENV)
    if not path:
        raise StreamVCError(f"no model given; pass --model or set {MODEL_ENV}")
    return model_io.load(path)


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default=None, help=f"model file (default: ${MODEL_ENV})")


def _add_threads(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS threads for compute; 1 matches the measurement protocol, 0 leaves the default")


def cmd_init_model(args) -> int:
    cfg = model_io.load_config(args.config) if args.config else ModelConfig()
    model = model_io.random_init(cfg, seed=args.seed)
    model_io.save(model, args.out)
    print(f"wrote {args.out} ({len(model.tensors)} tensors, seed {args.seed})")
    return 0


def cmd_features(args) -> int:
    x = audio.read_wav(args.inp)
    feats = audio.fbank(x)
    audio.write_mel(args.out, feats)
    print(f"wrote {args.out} ({feats.shape[0]} frames)")
    return 0


def cmd_convert(args) -> int:
    from .pipeline import StreamingConverter

    runtime = RuntimeConfig(chunk_ms=args.chunk_ms, history_chunks=args.history, speaker_id=args.speaker,
                            vocoder_mode=args.mode, crossfade_n=args.crossfade_n)
    model = _load_model(args.model)
    x = audio.read_wav(args.inp)
    conv = StreamingConverter(model, runtime)
    step = runtime.chunk_frames * audio.HOP_SAMPLES
    out = []
    with _threads(args.threads):
        for s in range(0, len(x), step):
            out.append(conv.feed(x[s : s + step]))
        out.append(conv.finish())
    y = np.concatenate(out)
    audio.write_wav(args.out, y)
    print(json.dumps(conv.latency(device_label=args.device_label).to_dict()))
    return 0


def cmd_vocode(args) -> int:
    model = _load_model(args.model)
    mels = audio.read_mel(args.mel)
    if args.chunk_frames < 1:
        raise InvalidRangeError("--chunk-frames must be >= 1")
    with _threads(args.threads):
        if args.mode == "mbs_streaming":
            session = model.vocoder(causal=True).new_session()
            y = np.concatenate([session.generate_streaming(mels[s : s + args.chunk_frames])
                                for s in range(0, mels.shape[0], args.chunk_frames)])
        else:
            xf = CrossfadeSpec(args.crossfade_n) if args.crossfade_n else None
            y = model.vocoder(causal=False).generate_chunked(mels, args.chunk_frames, xf)
    audio.write_wav(args.out, y)
    print(f"wrote {args.out} ({len(y)} samples)")
    return 0


def cmd_design_pqmf(args) -> int:
    bank = pqmf.design_bank(args.bands, args.taps, args.cutoff, args.beta)
    text = bank.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out} (delay {bank.delay} samples)")
    else:
        print(text)
    return 0


def cmd_mask(args) -> int:
    spec = masking.ChunkSpec(args.chunk, args.num_chunks, args.history)
    print(masking.format_mask(masking.build_chunk_mask(spec)))
    return 0


def cmd_bench(args) -> int:
    from .bench import run_bench

    if not args.seconds > 0:
        raise InvalidRangeError(f"--seconds must be positive, got {args.seconds}")
    model = _load_model(args.model)
    result = run_bench(model, args.chunk_ms, args.seconds, args.device_label, args.history, args.seed,
                       single_thread=not args.parallel, repeats=args.repeats)
    for rec in result["latency"]:
        print(json.dumps(rec))
    print(json.dumps(result["vocoder"]))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=2)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamvc", description="Streaming voice conversion runtime.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-model", help="write a randomly initialised model file")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--config", default=None, help="JSON model config (default: built-in sizes)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="weight initialisation seed")
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("features", help="extract 80-dim log-mel fbank from a wav into a mel file")
    p.add_argument("--in", dest="inp", required=True, help="input 16-bit PCM wav")
    p.add_argument("--out", required=True, help="output mel file")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("convert", help="stream a wav through the full conversion pipeline")
    _add_model(p)
    p.add_argument("--in", dest="inp", required=True, help="source speech, 16-bit PCM wav")
    p.add_argument("--out", required=True, help="converted wav to write")
    p.add_argument("--speaker", type=int, default=0, help="target speaker id")
    p.add_argument("--chunk-ms", type=int, default=160, help=f"acoustic chunk size, one of {ALLOWED_CHUNK_MS}")
    p.add_argument("--history", type=_history, default=DEFAULT_HISTORY_CHUNKS,
                   help="history chunks visible to attention, or 'inf'")
    p.add_argument("--mode", choices=VOCODER_MODES, default="mbs_streaming", help="vocoder mode")
    p.add_argument("--crossfade-n", type=int, default=81, help="Hanning window length for mb_offline_crossfade")
    p.add_argument("--device-label", default="cpu", help="free-form device name recorded in the report")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="unused by inference; kept for uniformity")
    _add_threads(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("vocode", help="synthesise a wav from a mel file")
    _add_model(p)
    p.add_argument("--mel", required=True, help="input mel file")
    p.add_argument("--out", required=True, help="output wav")
    p.add_argument("--mode", choices=VOCODER_MODES, default="mbs_streaming", help="vocoder mode")
    p.add_argument("--crossfade-n", type=int, default=81, help="Hanning window length; 0 disables crossfade")
    p.add_argument("--chunk-frames", type=int, default=16, help="mel frames generated per call")
    _add_threads(p)
    p.set_defaults(func=cmd_vocode)

    p = sub.add_parser("design-pqmf", help="design a PQMF bank and print it as JSON")
    p.add_argument("--bands", type=int, default=pqmf.DEFAULT_BANDS, help="number of sub-bands")
    p.add_argument("--taps", type=int, default=pqmf.DEFAULT_TAPS, help="prototype filter length")
    p.add_argument("--cutoff", type=float, default=pqmf.DEFAULT_CUTOFF, help="prototype cutoff as a fraction of Nyquist")
    p.add_argument("--beta", type=float, default=pqmf.DEFAULT_BETA, help="Kaiser window beta")
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_design_pqmf)

    p = sub.add_parser("mask", help="print a chunk attention mask as 0/1 rows")
    p.add_argument("--chunk", type=int, required=True, help="frames per chunk")
    p.add_argument("--num-chunks", type=int, required=True, help="number of chunks")
    p.add_argument("--history", type=_history, default=None, help="history chunks, default unlimited")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("bench", help="measure per-stage latency and vocoder RTF")
    _add_model(p)
    p.add_argument("--chunk-ms", type=_chunk_list, default=list(ALLOWED_CHUNK_MS),
                   help="comma-separated chunk sizes in ms")
    p.add_argument("--seconds", type=float, default=2.0, help="synthetic audio length per run")
    p.add_argument("--history", type=_history, default=DEFAULT_HISTORY_CHUNKS, help="history chunks")
    p.add_argument("--repeats", type=int, default=3, help="runs per chunk size; per-packet minimum is kept")
    p.add_argument("--device-label", default="cpu", help="free-form device name recorded in the report")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for the synthetic audio")
    p.add_argument("--parallel", action="store_true", help="allow multi-threaded BLAS instead of one thread")
    p.add_argument("--out", default=None, help="also write all records to this JSON file")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (StreamVCError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
