"""WAV I/O, resampling, log-mel fbank extraction and the mel interchange file."""

from __future__ import annotations

import struct
import wave
from math import gcd
from pathlib import Path
from typing import Union

import numpy as np
from scipy.signal import resample_poly

from .config import FBANK_DIM, HOP_SAMPLES, SAMPLE_RATE
from .errors import EmptyInputError, WavFormatError

PathLike = Union[str, Path]

WIN_SAMPLES = 400  # 25 ms
N_FFT = 512
PREEMPH = 0.97
LOG_FLOOR = 1e-10

MEL_MAGIC = b"SVML"


def read_wav(path: PathLike, target_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Read 16-bit PCM WAV as float32 in [-1, 1], mixed to mono and resampled."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getsampwidth() != 2:
                raise WavFormatError(f"{path}: only 16-bit PCM is supported")
            rate, channels = wf.getframerate(), wf.getnchannels()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from None
    x = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    if channels > 1:
        x = x.reshape(-1, channels).mean(axis=1)
    return resample(x, rate, target_rate)


def resample(x: np.ndarray, rate: int, target_rate: int = SAMPLE_RATE) -> np.ndarray:
    if rate == target_rate:
        return np.asarray(x, dtype=np.float32)
    g = gcd(rate, target_rate)
    return resample_poly(x, target_rate // g, rate // g).astype(np.float32)


def write_wav(path: PathLike, x: np.ndarray, rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())


def mel_filterbank(n_mels: int = FBANK_DIM, n_fft: int = N_FFT, rate: int = SAMPLE_RATE,
                   fmin: float = 20.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters ``[n_mels, n_fft//2 + 1]``."""
    fmax = fmax or rate / 2

    def hz2mel(f):
        return 1127.0 * np.log1p(np.asarray(f) / 700.0)

    def mel2hz(m):
        return 700.0 * np.expm1(np.asarray(m) / 1127.0)

    edges = mel2hz(np.linspace(hz2mel(fmin), hz2mel(fmax), n_mels + 2))
    freqs = np.linspace(0, rate / 2, n_fft // 2 + 1)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lower) / (center - lower)
    down = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(up, down))


class FbankExtractor:
    """Streaming 80-dim log-mel fbank: 25 ms window, 10 ms hop, 16 kHz.

    Frame ``t`` covers samples ``[160 t, 160 t + 400)``. :meth:`accept` emits
    every frame whose window is complete; :meth:`finish` zero-pads the tail so
    that ``N`` samples yield ``ceil(N / 160)`` frames in total.
    """

    def __init__(self):
        self.fb = mel_filterbank()
        self.window = np.hamming(WIN_SAMPLES)
        self.reset()

    def reset(self) -> None:
        self.buffer = np.zeros(0, dtype=np.float64)
        self.samples_seen = 0
        self.frames_emitted = 0

    def _frames(self, n: int) -> np.ndarray:
        idx = np.arange(WIN_SAMPLES)[None, :] + HOP_SAMPLES * np.arange(n)[:, None]
        seg = self.buffer[idx]
        seg = seg - seg.mean(axis=1, keepdims=True)
        seg = np.concatenate([seg[:, :1] * (1 - PREEMPH), seg[:, 1:] - PREEMPH * seg[:, :-1]], axis=1)
        spec = np.abs(np.fft.rfft(seg * self.window, n=N_FFT, axis=1)) ** 2
        feats = np.log(np.maximum(spec @ self.fb.T, LOG_FLOOR))
        self.buffer = self.buffer[HOP_SAMPLES * n :]
        self.frames_emitted += n
        return feats.astype(np.float32)

    def accept(self, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64).reshape(-1)
        self.samples_seen += len(samples)
        self.buffer = np.concatenate([self.buffer, samples])
        n = 0 if len(self.buffer) < WIN_SAMPLES else (len(self.buffer) - WIN_SAMPLES) // HOP_SAMPLES + 1
        return self._frames(n) if n else np.zeros((0, FBANK_DIM), dtype=np.float32)

    def finish(self) -> np.ndarray:
        total = -(-self.samples_seen // HOP_SAMPLES)
        n = total - self.frames_emitted
        if n <= 0:
            return np.zeros((0, FBANK_DIM), dtype=np.float32)
        need = HOP_SAMPLES * (n - 1) + WIN_SAMPLES
        self.buffer = np.concatenate([self.buffer, np.zeros(max(0, need - len(self.buffer)))])
        return self._frames(n)


def fbank(x: np.ndarray) -> np.ndarray:
    """Offline fbank of a whole signal (same frames as the streaming extractor)."""
    ex = FbankExtractor()
    return np.concatenate([ex.accept(x), ex.finish()], axis=0)


def write_mel(path: PathLike, mels: np.ndarray) -> None:
    """Mel interchange file: ``b"SVML"``, u32 frames, u32 bins, float32 LE frames."""
    mels = np.ascontiguousarray(mels, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MEL_MAGIC + struct.pack("<II", mels.shape[0], mels.shape[1]))
        fh.write(mels.tobytes())


def read_mel(path: PathLike, n_mels: int = FBANK_DIM) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MEL_MAGIC:
        raise WavFormatError(f"{path}: not a mel file (bad header)")
    frames, bins = struct.unpack("<II", data[4:12])
    if bins != n_mels:
        raise WavFormatError(f"{path}: {bins} mel bins, expected {n_mels}")
    if len(data) - 12 != 4 * frames * bins:
        raise WavFormatError(f"{path}: payload size does not match {frames} x {bins} frames")
    if frames == 0:
        raise EmptyInputError(f"{path}: mel file holds no frames")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(frames, bins).astype(np.float32)
