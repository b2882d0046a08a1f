"""End-to-end streaming conversion: waveform -> fbank -> PPG -> mel -> waveform.

Input is consumed in 10 ms hops, the granularity at which audio arrives, so
the encoder fires as soon as ``chunk + 30 ms`` of speech is available.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .acoustic import AcousticSession
from .audio import FbankExtractor
from .config import HOP_SAMPLES, RuntimeConfig
from .metrics import LatencyReport, latency_report
from .model_io import Model
from .vocoder import ChunkStitcher, CrossfadeSpec

# the vocoder's first packet is 20 ms of mel frames, independent of the acoustic chunk
VOCODER_PACKET_FRAMES = 2


@dataclass
class StageTimes:
    """Wall-clock seconds per processed packet, per stage."""

    encoder: list = field(default_factory=list)
    decoder: list = field(default_factory=list)
    vocoder: list = field(default_factory=list)

    def first_packet_ms(self) -> tuple[float, float, float]:
        return tuple(1e3 * (getattr(self, s)[0] if getattr(self, s) else 0.0) for s in ("encoder", "decoder", "vocoder"))

    def median_ms(self) -> tuple[float, float, float]:
        return tuple(1e3 * (float(np.median(getattr(self, s))) if getattr(self, s) else 0.0)
                     for s in ("encoder", "decoder", "vocoder"))


class StreamingConverter:
    """Drives one conversion stream.

    Args:
        model: Loaded or randomly initialised model.
        runtime: Chunk size, history, speaker and vocoder mode.
    """

    def __init__(self, model: Model, runtime: RuntimeConfig):
        self.model = model
        self.runtime = runtime
        self.acoustic = model.acoustic()
        self.session = AcousticSession(self.acoustic, runtime.speaker_id, runtime.chunk_ms, runtime.history_chunks)
        self.fbank = FbankExtractor()
        if runtime.vocoder_mode == "mbs_streaming":
            self.vocoder = model.vocoder(causal=True)
            self.voc_session = self.vocoder.new_session()
            self.stitcher = None
        else:
            self.vocoder = model.vocoder(causal=False)
            self.voc_session = None
            xf = CrossfadeSpec(runtime.crossfade_n)
            self.stitcher = ChunkStitcher(self.vocoder, xf, min_chunk_frames=4 * runtime.ppg_chunk)
        self.times = StageTimes()
        self.samples_in = 0
        self.samples_out = 0
        # input samples / fbank frames consumed when audio first appeared
        self.first_output_at: Optional[int] = None
        self.first_output_frames: Optional[int] = None

    def _vocode(self, mel: np.ndarray) -> np.ndarray:
        if mel.shape[0] == 0:
            return np.zeros(0, dtype=np.float32)
        if self.voc_session is not None:
            out = []
            for s in range(0, mel.shape[0], VOCODER_PACKET_FRAMES):
                t0 = time.perf_counter()
                out.append(self.voc_session.generate_streaming(mel[s : s + VOCODER_PACKET_FRAMES]))
                self.times.vocoder.append(time.perf_counter() - t0)
            return np.concatenate(out)
        t0 = time.perf_counter()
        y = self.stitcher.push(mel)
        self.times.vocoder.append(time.perf_counter() - t0)
        return y

    def _frames(self, frames: np.ndarray) -> np.ndarray:
        t0 = time.perf_counter()
        ppg = self.session.accept_frames(frames)
        t1 = time.perf_counter()
        if ppg.shape[0] == 0:
            return np.zeros(0, dtype=np.float32)
        self.times.encoder.append(t1 - t0)
        mel = self.session.decode_chunk(ppg)
        self.times.decoder.append(time.perf_counter() - t1)
        return self._vocode(mel)

    def _emit(self, y: np.ndarray) -> np.ndarray:
        if len(y) and self.first_output_at is None:
            self.first_output_at = self.samples_in
            self.first_output_frames = self.session.counters.frames_consumed
        self.samples_out += len(y)
        return y

    def feed(self, samples: np.ndarray) -> np.ndarray:
        """Push waveform samples (any length); returns converted audio ready so far."""
        samples = np.asarray(samples, dtype=np.float32).reshape(-1)
        out = []
        for s in range(0, len(samples), HOP_SAMPLES):
            hop = samples[s : s + HOP_SAMPLES]
            self.samples_in += len(hop)
            frames = self.fbank.accept(hop)
            for f in frames:
                out.append(self._emit(self._frames(f[None, :])))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.float32)

    def finish(self) -> np.ndarray:
        """Flush features, acoustic model and vocoder; output is trimmed to whole input hops."""
        out = []
        frames = self.fbank.finish()
        if frames.shape[0]:
            out.append(self._emit(self._frames(frames)))
        mel = self.session.flush(pad=True)
        out.append(self._emit(self._vocode(mel)))
        if self.stitcher is not None:
            out.append(self._emit(self.stitcher.finish()))
        y = np.concatenate(out) if out else np.zeros(0, dtype=np.float32)
        target = HOP_SAMPLES * (-(-self.samples_in // HOP_SAMPLES))
        excess = self.samples_out - target
        if excess > 0:
            y = y[: max(0, len(y) - excess)]
            self.samples_out = target
        return y

    def latency(self, device_label: str = "", statistic: str = "first") -> LatencyReport:
        enc, dec, voc = self.times.first_packet_ms() if statistic == "first" else self.times.median_ms()
        return latency_report(self.runtime.chunk_ms, enc, dec, voc, device_label=device_label)


def convert(model: Model, x: np.ndarray, runtime: RuntimeConfig) -> tuple[np.ndarray, StreamingConverter]:
    conv = StreamingConverter(model, runtime)
    y = np.concatenate([conv.feed(x), conv.finish()])
    return y, conv
