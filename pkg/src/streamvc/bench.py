"""Latency and RTF benchmark harness.

Compute runs single-threaded by default so numbers are comparable across
machines with different core counts.
"""

from __future__ import annotations

import contextlib
import time
from typing import Iterable, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ALLOWED_CHUNK_MS, HOP_SAMPLES, SAMPLE_RATE, RuntimeConfig, validate_chunk_ms
from .errors import InvalidRangeError
from .kernels import current_backend
from .metrics import latency_report, rtf
from .model_io import Model
from .pipeline import StreamingConverter


def synthetic_audio(seconds: float, seed: int = 0) -> np.ndarray:
    """Speech-like test signal: a gliding harmonic tone plus low-level noise."""
    if not seconds > 0:
        raise InvalidRangeError(f"seconds must be positive, got {seconds}")
    rng = np.random.default_rng(seed)
    n = int(round(seconds * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0 = 120.0 + 30.0 * np.sin(2 * np.pi * 0.5 * t)
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    x = sum(0.3 / h * np.sin(h * phase) for h in range(1, 6))
    x = x + 0.01 * rng.standard_normal(n)
    return (0.5 * x / np.abs(x).max()).astype(np.float32)


def _threads(single_thread: bool):
    return threadpool_limits(1) if single_thread else contextlib.nullcontext()


def _stream_once(model: Model, audio: np.ndarray, runtime: RuntimeConfig, single_thread: bool) -> StreamingConverter:
    conv = StreamingConverter(model, runtime)
    with _threads(single_thread):
        conv.feed(audio)
        conv.finish()
    return conv


def _record(runs: list[StreamingConverter], device_label: str) -> dict:
    """Median over packets of the per-packet minimum across repeated runs.

    The minimum filters scheduler noise, the median filters warm-up packets.
    """
    stage_ms = []
    for stage in ("encoder", "decoder", "vocoder"):
        per_packet = np.min(np.array([getattr(c.times, stage) for c in runs]), axis=0)
        stage_ms.append(1e3 * float(np.median(per_packet)))
    rec = latency_report(runs[0].runtime.chunk_ms, *stage_ms, device_label=device_label).to_dict()
    rec.update(backend=current_backend(), packets=len(runs[0].times.encoder), repeats=len(runs),
               first_output_ms=1e3 * (runs[0].first_output_at or 0) / SAMPLE_RATE)
    return rec


def _runtime(chunk_ms: int, history: int, speaker: int) -> RuntimeConfig:
    return RuntimeConfig(chunk_ms=chunk_ms, history_chunks=history, speaker_id=speaker, vocoder_mode="mbs_streaming")


def bench_chunk(model: Model, audio: np.ndarray, chunk_ms: int, history: int = 10, speaker: int = 0,
                device_label: str = "cpu", single_thread: bool = True, repeats: int = 3) -> dict:
    """One latency record from ``repeats`` full streaming runs at one chunk size."""
    if repeats < 1:
        raise InvalidRangeError(f"repeats must be >= 1, got {repeats}")
    runtime = _runtime(chunk_ms, history, speaker)
    return _record([_stream_once(model, audio, runtime, single_thread) for _ in range(repeats)], device_label)


def vocoder_rtf(model: Model, frames: int = 200, packet_frames: int = 2, seed: int = 0,
                device_label: str = "cpu", single_thread: bool = True) -> dict:
    """Streaming vocoder real-time factor in the vocoder-comparison table layout."""
    voc = model.vocoder(causal=True)
    mels = np.random.default_rng(seed).standard_normal((frames, voc.cfg.n_mels)).astype(np.float32)
    session = voc.new_session()
    with _threads(single_thread):
        t0 = time.perf_counter()
        for s in range(0, frames, packet_frames):
            session.generate_streaming(mels[s : s + packet_frames])
        elapsed = time.perf_counter() - t0
    return {"model": "MBS HiFi-GAN (streaming)", "mcd_db": None, "device_label": device_label,
            "rtf": rtf(elapsed, frames * HOP_SAMPLES / SAMPLE_RATE), "backend": current_backend()}


def run_bench(model: Model, chunk_sizes: Iterable[int] = ALLOWED_CHUNK_MS, seconds: float = 2.0,
              device_label: str = "cpu", history: int = 10, seed: int = 0, single_thread: bool = True,
              rtf_frames: Optional[int] = None, repeats: int = 3) -> dict:
    """Latency records for each chunk size plus the vocoder RTF record."""
    chunk_sizes = [validate_chunk_ms(c) for c in chunk_sizes]
    if repeats < 1:
        raise InvalidRangeError(f"repeats must be >= 1, got {repeats}")
    audio = synthetic_audio(seconds, seed)
    runs: dict[int, list] = {c: [] for c in chunk_sizes}
    # interleave repeats so a slow stretch of wall time is not charged to one chunk size
    for _ in range(repeats):
        for c in chunk_sizes:
            runs[c].append(_stream_once(model, audio, _runtime(c, history, 0), single_thread))
    records = [_record(runs[c], device_label) for c in chunk_sizes]
    frames = rtf_frames or max(2, int(seconds * SAMPLE_RATE) // HOP_SAMPLES)
    return {"latency": records, "vocoder": vocoder_rtf(model, frames, seed=seed, device_label=device_label,
                                                       single_thread=single_thread)}


def check_accounting(record: dict) -> bool:
    """True when the record's total is exactly recomputable from its parts."""
    rep = latency_report(record["chunk_ms"], record["encoder_ms"], record["decoder_ms"], record["vocoder_ms"],
                         record["device_label"], record["lookahead_ms"])
    return rep.total_ms == record["total_ms"]
