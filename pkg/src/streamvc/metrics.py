"""Objective metrics and latency/RTF accounting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.fft import dct

from .errors import AlignmentError, MetricError

# vocoder generator loss weights (time-domain and multi-resolution STFT terms)
LAMBDA_TIME = 10.0
LAMBDA_STFT = 2.0
# weight of the attention-decoder term in the hybrid CTC/attention ASR loss;
# training-only, kept for reference
ASR_AED_WEIGHT = 0.7

LOOKAHEAD_MS = 30.0
MCD_CONST = 10.0 / math.log(10.0)

DEFAULT_STFT_RESOLUTIONS = ((1024, 120, 600), (2048, 240, 1200), (512, 50, 240))


def mel_cepstrum(log_mel: np.ndarray, num_coeffs: int = 13) -> np.ndarray:
    """Cepstra ``c_0..c_num_coeffs`` of log-mel frames ``[T, n_mels]`` (orthonormal DCT-II)."""
    return dct(np.asarray(log_mel, dtype=np.float64), type=2, norm="ortho", axis=-1)[:, : num_coeffs + 1]


def mcd(ref: np.ndarray, hyp: np.ndarray, num_coeffs: int = 13) -> float:
    """Frame-averaged mel cepstral distortion in dB.

    ``ref`` and ``hyp`` are cepstra ``[T, D]`` with ``c_0`` in column 0;
    coefficients ``1..num_coeffs`` are compared frame by frame (no DTW).
    """
    ref = np.atleast_2d(np.asarray(ref, dtype=np.float64))
    hyp = np.atleast_2d(np.asarray(hyp, dtype=np.float64))
    if ref.shape[0] != hyp.shape[0]:
        raise AlignmentError(f"frame counts differ: {ref.shape[0]} vs {hyp.shape[0]}")
    if ref.shape[1] != hyp.shape[1]:
        raise AlignmentError(f"coefficient counts differ: {ref.shape[1]} vs {hyp.shape[1]}")
    if ref.shape[0] == 0:
        raise MetricError("MCD of zero frames is undefined")
    diff = ref[:, 1 : num_coeffs + 1] - hyp[:, 1 : num_coeffs + 1]
    per_frame = MCD_CONST * np.sqrt(2.0 * np.sum(diff**2, axis=1))
    return float(per_frame.mean())


def mcd_from_log_mels(ref_log_mel: np.ndarray, hyp_log_mel: np.ndarray, num_coeffs: int = 13) -> float:
    return mcd(mel_cepstrum(ref_log_mel, num_coeffs), mel_cepstrum(hyp_log_mel, num_coeffs), num_coeffs)


def f0_metrics(ref_f0: Sequence[float], hyp_f0: Sequence[float]) -> tuple[float, float]:
    """(RMSE in Hz, Pearson correlation) over frames voiced (> 0) in both tracks."""
    ref = np.asarray(ref_f0, dtype=np.float64)
    hyp = np.asarray(hyp_f0, dtype=np.float64)
    if ref.shape != hyp.shape:
        raise AlignmentError(f"F0 tracks differ in length: {ref.shape} vs {hyp.shape}")
    voiced = (ref > 0) & (hyp > 0)
    if voiced.sum() < 2:
        raise MetricError("fewer than two jointly voiced frames; correlation undefined")
    r, h = ref[voiced], hyp[voiced]
    rmse = float(np.sqrt(np.mean((r - h) ** 2)))
    rc, hc = r - r.mean(), h - h.mean()
    denom = np.sqrt(np.sum(rc**2) * np.sum(hc**2))
    if denom == 0:
        raise MetricError("constant F0 track; correlation undefined")
    corr = float(np.clip(np.sum(rc * hc) / denom, -1.0, 1.0))
    return rmse, corr


OCTAVE_TOLERANCE = 0.9


def estimate_f0(
    wave: np.ndarray,
    sample_rate: int = 16000,
    hop: int = 160,
    frame_length: int = 640,
    fmin: float = 60.0,
    fmax: float = 500.0,
    voicing_threshold: float = 0.45,
) -> np.ndarray:
    """Autocorrelation pitch tracker; unvoiced frames are 0.

    A frame is voiced when its normalised autocorrelation peak within
    ``[sr/fmax, sr/fmin]`` lags exceeds ``voicing_threshold``. The peak lag is
    refined by parabolic interpolation.
    """
    x = np.asarray(wave, dtype=np.float64)
    n_frames = max(0, 1 + (len(x) - frame_length) // hop) if len(x) >= frame_length else 0
    lo, hi = int(sample_rate / fmax), int(math.ceil(sample_rate / fmin))
    out = np.zeros(n_frames)
    for f in range(n_frames):
        seg = x[f * hop : f * hop + frame_length]
        seg = seg - seg.mean()
        energy = np.dot(seg, seg)
        if energy <= 1e-10:
            continue
        ac = np.correlate(seg, seg, mode="full")[frame_length - 1 :]
        # unbiased normalisation so long lags are not penalised
        ac = ac / (energy * (frame_length - np.arange(frame_length)) / frame_length)
        hi_f = min(hi, frame_length - 2)
        if hi_f <= lo:
            continue
        window = ac[lo : hi_f + 1]
        best = float(window.max())
        if best < voicing_threshold:
            continue
        # first local peak close to the best one, so multiples of the period lose to the period
        peaks = np.flatnonzero((window[1:-1] >= window[:-2]) & (window[1:-1] >= window[2:])) + 1
        good = peaks[window[peaks] >= OCTAVE_TOLERANCE * best]
        lag = lo + int(good[0] if len(good) else np.argmax(window))
        a, b, c = ac[lag - 1], ac[lag], ac[lag + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
        out[f] = sample_rate / (lag + shift)
    return out


def _stft_mag(x: np.ndarray, fft_size: int, hop: int, win_length: int) -> np.ndarray:
    window = np.zeros(fft_size)
    start = (fft_size - win_length) // 2
    window[start : start + win_length] = np.hanning(win_length + 1)[:-1] if win_length > 1 else 1.0
    pad = fft_size // 2
    mode = "reflect" if len(x) > pad else "constant"
    xp = np.pad(x, pad, mode=mode)
    n_frames = 1 + (len(xp) - fft_size) // hop
    idx = np.arange(fft_size)[None, :] + hop * np.arange(n_frames)[:, None]
    spec = np.fft.rfft(xp[idx] * window, axis=-1)
    return np.sqrt(np.maximum(spec.real**2 + spec.imag**2, 1e-7))


def mrstft_distance(
    x: np.ndarray, y: np.ndarray, resolutions: Iterable[tuple[int, int, int]] = DEFAULT_STFT_RESOLUTIONS
) -> float:
    """Sum over resolutions of spectral convergence plus mean log-magnitude L1.

    Spectral convergence is normalised by the mean of both Frobenius norms so
    that the distance is symmetric.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise AlignmentError(f"waveform lengths differ: {len(x)} vs {len(y)}")
    resolutions = list(resolutions)
    if not resolutions:
        raise MetricError("at least one STFT resolution is required")
    total = 0.0
    for fft_size, hop, win in resolutions:
        if not 0 < hop < fft_size or not 0 < win <= fft_size:
            raise MetricError(f"invalid STFT resolution {(fft_size, hop, win)}")
        mx, my = _stft_mag(x, fft_size, hop, win), _stft_mag(y, fft_size, hop, win)
        norm = 0.5 * (np.linalg.norm(mx) + np.linalg.norm(my))
        sc = np.linalg.norm(my - mx) / norm
        mag = np.mean(np.abs(np.log(my) - np.log(mx)))
        total += sc + mag
    return float(total)


def combine_vocoder_loss(l_g: float, l_time: float, l_stft: float) -> float:
    """Generator objective ``L_g + 10 L_time + 2 L_stft`` evaluated as a number."""
    vals = (l_g, l_time, l_stft)
    if not all(math.isfinite(v) for v in vals):
        raise MetricError(f"non-finite loss term in {vals}")
    return l_g + LAMBDA_TIME * l_time + LAMBDA_STFT * l_stft


@dataclass(frozen=True)
class LatencyReport:
    chunk_ms: float
    lookahead_ms: float
    encoder_ms: float
    decoder_ms: float
    vocoder_ms: float
    total_ms: float
    realtime_ok: bool
    device_label: str = ""

    @property
    def compute_ms(self) -> float:
        return self.encoder_ms + self.decoder_ms + self.vocoder_ms

    def to_dict(self) -> dict:
        return asdict(self)


def latency_report(
    chunk_ms: float,
    encoder_ms: float,
    decoder_ms: float,
    vocoder_ms: float,
    device_label: str = "",
    lookahead_ms: float = LOOKAHEAD_MS,
) -> LatencyReport:
    """First-packet latency: chunk + lookahead + per-stage compute of the first packet.

    Real-time operation requires the first packet's compute to finish within
    one chunk duration.
    """
    times = (chunk_ms, encoder_ms, decoder_ms, vocoder_ms, lookahead_ms)
    if any(not math.isfinite(t) or t < 0 for t in times):
        raise MetricError(f"latency terms must be finite and non-negative, got {times}")
    if chunk_ms <= 0 or round(chunk_ms) % 40 or chunk_ms != round(chunk_ms):
        raise MetricError(f"chunk_ms must be a positive multiple of 40, got {chunk_ms}")
    total = chunk_ms + lookahead_ms + encoder_ms + decoder_ms + vocoder_ms
    compute = encoder_ms + decoder_ms + vocoder_ms
    return LatencyReport(
        chunk_ms, lookahead_ms, encoder_ms, decoder_ms, vocoder_ms, total, compute < chunk_ms, device_label
    )


def rtf(compute_seconds: float, audio_seconds: float) -> float:
    """Real-time factor; below 1 is faster than real time."""
    if audio_seconds <= 0 or not math.isfinite(audio_seconds):
        raise MetricError("audio duration must be positive")
    if compute_seconds < 0 or not math.isfinite(compute_seconds):
        raise MetricError("compute time must be finite and non-negative")
    return compute_seconds / audio_seconds


def max_relative_deviation(a: np.ndarray, b: np.ndarray, floor: Optional[float] = None) -> float:
    """``max|a-b| / max|b|`` (normwise-infinity relative error against reference ``b``)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise AlignmentError(f"shapes differ: {a.shape} vs {b.shape}")
    scale = max(float(np.abs(b).max(initial=0.0)), floor or np.finfo(np.float64).tiny)
    return float(np.abs(a - b).max(initial=0.0) / scale)
