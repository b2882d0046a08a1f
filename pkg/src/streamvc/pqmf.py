"""Pseudo-QMF filter bank: prototype design, analysis and synthesis.

The prototype is a Kaiser-windowed sinc of ``taps`` coefficients, symmetric
about ``(taps-1)/2``. Band ``k`` uses the cosine-modulated filter::

    h_k[n] = 2 h[n] cos((2k+1) pi/(2K) (n - (taps-1)/2) + (-1)^k pi/4)

and synthesis uses its time reverse. Analysis filters, then decimates by K;
synthesis zero-stuffs by K, filters with ``K * g_k`` and sums, so a round trip
has unit gain and a delay of ``taps - 1`` samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InsufficientInputError, InvalidSpecError, ShapeError
from .nn import ConvCache, ConvSpec, conv1d, conv1d_streaming_step

DEFAULT_BANDS = 4
DEFAULT_TAPS = 62
DEFAULT_CUTOFF = 0.142
DEFAULT_BETA = 9.0


def design_prototype(taps: int, cutoff_ratio: float, kaiser_beta: float) -> np.ndarray:
    """Kaiser-windowed sinc low-pass with cutoff ``cutoff_ratio * pi`` rad/sample."""
    m = np.arange(taps) - (taps - 1) / 2.0
    wc = np.pi * cutoff_ratio
    ideal = np.where(m == 0, cutoff_ratio, np.sin(wc * m) / (np.pi * np.where(m == 0, 1.0, m)))
    h = ideal * np.kaiser(taps, kaiser_beta)
    # enforce exact symmetry against last-bit rounding in sin()
    return 0.5 * (h + h[::-1])


@dataclass(frozen=True, eq=False)
class PqmfBank:
    num_bands: int
    taps: int
    cutoff_ratio: float
    kaiser_beta: float
    prototype: np.ndarray
    analysis_filters: np.ndarray
    synthesis_filters: np.ndarray

    @property
    def delay(self) -> int:
        """Round-trip (analysis + synthesis) delay in samples."""
        return self.taps - 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_bands": self.num_bands,
                "taps": self.taps,
                "cutoff_ratio": self.cutoff_ratio,
                "kaiser_beta": self.kaiser_beta,
                "prototype": self.prototype.tolist(),
                "analysis_filters": self.analysis_filters.tolist(),
                "synthesis_filters": self.synthesis_filters.tolist(),
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "PqmfBank":
        d = json.loads(text)
        bank = design_bank(d["num_bands"], d["taps"], d["cutoff_ratio"], d["kaiser_beta"])
        for key in ("prototype", "analysis_filters", "synthesis_filters"):
            stored = np.asarray(d[key], dtype=np.float64)
            if stored.shape != getattr(bank, key).shape:
                raise InvalidSpecError(f"{key} has shape {stored.shape}, expected {getattr(bank, key).shape}")
        return cls(
            bank.num_bands,
            bank.taps,
            bank.cutoff_ratio,
            bank.kaiser_beta,
            np.asarray(d["prototype"], dtype=np.float64),
            np.asarray(d["analysis_filters"], dtype=np.float64),
            np.asarray(d["synthesis_filters"], dtype=np.float64),
        )

    def allclose(self, other: "PqmfBank", atol: float = 0.0) -> bool:
        return (
            (self.num_bands, self.taps, self.cutoff_ratio, self.kaiser_beta)
            == (other.num_bands, other.taps, other.cutoff_ratio, other.kaiser_beta)
            and np.allclose(self.prototype, other.prototype, rtol=0, atol=atol)
            and np.allclose(self.analysis_filters, other.analysis_filters, rtol=0, atol=atol)
            and np.allclose(self.synthesis_filters, other.synthesis_filters, rtol=0, atol=atol)
        )


def design_bank(
    num_bands: int = DEFAULT_BANDS,
    taps: int = DEFAULT_TAPS,
    cutoff_ratio: float = DEFAULT_CUTOFF,
    kaiser_beta: float = DEFAULT_BETA,
) -> PqmfBank:
    if num_bands < 1:
        raise InvalidSpecError(f"num_bands must be >= 1, got {num_bands}")
    if taps < num_bands:
        raise InvalidSpecError(f"taps ({taps}) must be >= num_bands ({num_bands})")
    if not 0.0 < cutoff_ratio < 0.5:
        raise InvalidSpecError(f"cutoff_ratio must lie in (0, 0.5), got {cutoff_ratio}")
    if kaiser_beta < 0:
        raise InvalidSpecError("kaiser_beta must be non-negative")
    if num_bands == 1:
        # a single band is a pure delay of taps-1 samples split across both stages
        proto = np.zeros(taps)
        proto[(taps - 1) // 2] = 1.0
        ana = proto[None, :].copy()
        syn = np.zeros((1, taps))
        syn[0, taps - 1 - (taps - 1) // 2] = 1.0
        return PqmfBank(1, taps, cutoff_ratio, kaiser_beta, proto, ana, syn)
    h = design_prototype(taps, cutoff_ratio, kaiser_beta)
    m = np.arange(taps) - (taps - 1) / 2.0
    k = np.arange(num_bands)[:, None]
    phase = (2 * k + 1) * (np.pi / (2 * num_bands)) * m[None, :]
    sign = np.where(k % 2 == 0, 1.0, -1.0) * np.pi / 4
    ana = 2.0 * h[None, :] * np.cos(phase + sign)
    syn = ana[:, ::-1].copy()
    return PqmfBank(num_bands, taps, cutoff_ratio, kaiser_beta, h, ana, syn)


def _analysis_conv(bank: PqmfBank) -> tuple[ConvSpec, np.ndarray, np.ndarray]:
    spec = ConvSpec(1, bank.num_bands, bank.taps, causal=True, stride=bank.num_bands)
    # kernels correlate, so flip to realise convolution with h_k
    w = bank.analysis_filters[:, None, ::-1].astype(np.float32)
    return spec, np.ascontiguousarray(w), np.zeros(bank.num_bands, dtype=np.float32)


def _synthesis_conv(bank: PqmfBank) -> tuple[ConvSpec, np.ndarray, np.ndarray]:
    spec = ConvSpec(bank.num_bands, 1, bank.taps, causal=True)
    w = (bank.num_bands * bank.synthesis_filters[None, :, ::-1]).astype(np.float32)
    return spec, np.ascontiguousarray(w), np.zeros(1, dtype=np.float32)


def analysis(x: np.ndarray, bank: PqmfBank) -> np.ndarray:
    """Split waveform ``x [N]`` into ``[K, ceil(N/K)]`` sub-band signals."""
    x = np.asarray(x, dtype=np.float32).reshape(-1)
    if x.shape[0] < bank.taps:
        raise InsufficientInputError(f"analysis needs >= {bank.taps} samples, got {x.shape[0]}")
    spec, w, b = _analysis_conv(bank)
    return conv1d(x[None, :], spec, w, b)


def _zero_stuff(sub: np.ndarray, k: int) -> np.ndarray:
    up = np.zeros((sub.shape[0], sub.shape[1] * k), dtype=np.float32)
    up[:, ::k] = sub
    return up


def _check_bands(sub: np.ndarray, bank: PqmfBank) -> np.ndarray:
    sub = np.asarray(sub, dtype=np.float32)
    if sub.ndim != 2 or sub.shape[0] != bank.num_bands:
        raise ShapeError(f"expected {bank.num_bands} sub-bands, got shape {sub.shape}")
    return sub


def synthesis(sub: np.ndarray, bank: PqmfBank) -> np.ndarray:
    """Merge ``[K, M]`` sub-bands into a causal waveform of ``K*M`` samples."""
    sub = _check_bands(sub, bank)
    if sub.shape[1] == 0:
        return np.zeros(0, dtype=np.float32)
    spec, w, b = _synthesis_conv(bank)
    return conv1d(_zero_stuff(sub, bank.num_bands), spec, w, b)[0]


def synthesis_centered(sub: np.ndarray, bank: PqmfBank) -> np.ndarray:
    """Zero-phase-aligned (non-causal) synthesis used by the offline MB vocoder."""
    sub = _check_bands(sub, bank)
    spec, w, b = _synthesis_conv(bank)
    spec = ConvSpec(spec.in_channels, 1, spec.kernel_size, causal=False, padding="same")
    return conv1d(_zero_stuff(sub, bank.num_bands), spec, w, b)[0]


class StreamingSynthesis:
    """Causal synthesis driven hop by hop; output equals :func:`synthesis`."""

    def __init__(self, bank: PqmfBank):
        self.bank = bank
        self.spec, self.w, self.b = _synthesis_conv(bank)
        self.cache = ConvCache.zeros(self.spec)

    def __call__(self, sub: np.ndarray) -> np.ndarray:
        sub = _check_bands(sub, self.bank)
        y, self.cache = conv1d_streaming_step(_zero_stuff(sub, self.bank.num_bands), self.cache, self.spec, self.w, self.b)
        return y[0]

    def reset(self) -> None:
        self.cache.reset()


def reconstruction_snr(x: np.ndarray, bank: Optional[PqmfBank] = None) -> float:
    """Round-trip SNR in dB after compensating the ``taps-1`` sample delay."""
    bank = bank or design_bank()
    x = np.asarray(x, dtype=np.float64)
    y = synthesis(analysis(x, bank), bank).astype(np.float64)
    d = bank.delay
    ref = x[: len(x) - d]
    err = y[d : d + len(ref)] - ref
    return float(10 * np.log10(np.sum(ref**2) / max(np.sum(err**2), 1e-300)))
