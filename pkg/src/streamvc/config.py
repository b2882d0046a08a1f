"""Architecture and runtime configuration.

Architecture sizes below are configuration defaults chosen for a small
CPU-friendly model; none of them is a published value.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from math import prod
from typing import Optional

from .errors import InvalidChunkError, InvalidSpecError

SAMPLE_RATE = 16000
HOP_SAMPLES = 160  # 10 ms
FBANK_DIM = 80
SUBSAMPLING = 4  # one PPG frame per 40 ms
LOOKAHEAD_FRAMES = 3  # extra fbank frames a valid k=3,s=2 x2 subsampler needs
ALLOWED_CHUNK_MS = (40, 80, 120, 160, 200)
DEFAULT_HISTORY_CHUNKS = 10


@dataclass(frozen=True)
class AcousticConfig:
    n_mels: int = FBANK_DIM
    d_model: int = 256
    heads: int = 4
    encoder_layers: int = 6
    encoder_ffn: int = 1024
    decoder_layers: int = 4
    decoder_conv_filter: int = 1024
    decoder_conv_kernel: int = 9
    num_phones: int = 212
    num_speakers: int = 8
    ppg_softmax: bool = True

    def validate(self) -> "AcousticConfig":
        for name in ("n_mels", "d_model", "heads", "encoder_layers", "encoder_ffn", "decoder_layers",
                     "decoder_conv_filter", "decoder_conv_kernel", "num_phones", "num_speakers"):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f"acoustic.{name} must be positive")
        if self.d_model % self.heads:
            raise InvalidSpecError("acoustic.d_model must be divisible by heads")
        if self.d_model % 2:
            raise InvalidSpecError("acoustic.d_model must be even (sinusoidal positions)")
        return self


@dataclass(frozen=True)
class VocoderConfig:
    n_mels: int = FBANK_DIM
    bands: int = 4
    upsample_factors: tuple = (5, 4, 2)
    upsample_initial_channel: int = 128
    resblock_kernel_sizes: tuple = (3, 7, 11)
    resblock_dilations: tuple = ((1, 3, 5), (1, 3, 5), (1, 3, 5))
    pre_kernel: int = 7
    post_kernel: int = 7
    causal: bool = True
    hop_samples: int = HOP_SAMPLES
    pqmf_taps: int = 62
    pqmf_cutoff: float = 0.142
    pqmf_beta: float = 9.0

    def __post_init__(self):
        # JSON round trips hand back lists
        object.__setattr__(self, "upsample_factors", tuple(self.upsample_factors))
        object.__setattr__(self, "resblock_kernel_sizes", tuple(self.resblock_kernel_sizes))
        object.__setattr__(self, "resblock_dilations", tuple(tuple(d) for d in self.resblock_dilations))

    def channels(self, stage: int) -> int:
        """Channel width after upsampling stage ``stage`` (``-1`` = pre-conv)."""
        return max(self.upsample_initial_channel // (2 ** (stage + 1)), 1)

    def validate(self) -> "VocoderConfig":
        if not self.upsample_factors or any(f < 1 for f in self.upsample_factors):
            raise InvalidSpecError("vocoder.upsample_factors must be positive")
        if prod(self.upsample_factors) * self.bands != self.hop_samples:
            raise InvalidSpecError(
                f"prod(upsample_factors) * bands = {prod(self.upsample_factors) * self.bands}, "
                f"expected hop of {self.hop_samples}"
            )
        if len(self.resblock_kernel_sizes) != len(self.resblock_dilations):
            raise InvalidSpecError("one dilation list per resblock kernel size is required")
        kernels = [self.pre_kernel, self.post_kernel, *self.resblock_kernel_sizes, *self.upsample_kernels]
        if any(k < 1 or k % 2 == 0 for k in kernels):
            raise InvalidSpecError("vocoder kernels must be odd and positive")
        if self.bands < 1 or self.upsample_initial_channel < 1:
            raise InvalidSpecError("vocoder.bands and channels must be positive")
        return self

    @property
    def upsample_kernels(self) -> tuple:
        return tuple(2 * f + 1 for f in self.upsample_factors)


@dataclass(frozen=True)
class ModelConfig:
    acoustic: AcousticConfig = field(default_factory=AcousticConfig)
    vocoder: VocoderConfig = field(default_factory=VocoderConfig)
    sample_rate: int = SAMPLE_RATE
    hop_samples: int = HOP_SAMPLES
    default_chunk_ms: int = 160
    default_history_chunks: int = DEFAULT_HISTORY_CHUNKS

    def validate(self) -> "ModelConfig":
        self.acoustic.validate()
        self.vocoder.validate()
        if self.vocoder.hop_samples != self.hop_samples:
            raise InvalidSpecError("vocoder hop must equal model hop")
        if self.acoustic.n_mels != self.vocoder.n_mels:
            raise InvalidSpecError("acoustic and vocoder mel dimensions differ")
        if self.sample_rate != SAMPLE_RATE or self.hop_samples != HOP_SAMPLES:
            raise InvalidSpecError("only 16 kHz audio with a 10 ms hop is supported")
        validate_chunk_ms(self.default_chunk_ms)
        if self.default_history_chunks < 0:
            raise InvalidSpecError("default_history_chunks must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            acoustic = AcousticConfig(**d.get("acoustic", {}))
            vocoder = VocoderConfig(**d.get("vocoder", {}))
            rest = {k: v for k, v in d.items() if k not in ("acoustic", "vocoder")}
            return cls(acoustic=acoustic, vocoder=vocoder, **rest).validate()
        except TypeError as exc:
            raise InvalidSpecError(f"bad model config: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    def replace(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def validate_chunk_ms(chunk_ms: int) -> int:
    if chunk_ms <= 0 or chunk_ms % 40:
        raise InvalidChunkError(f"chunk size must be a positive multiple of 40 ms, got {chunk_ms} ms")
    return chunk_ms


VOCODER_MODES = ("mbs_streaming", "mb_offline_crossfade")


@dataclass(frozen=True)
class RuntimeConfig:
    chunk_ms: int = 160
    history_chunks: Optional[int] = DEFAULT_HISTORY_CHUNKS
    speaker_id: int = 0
    vocoder_mode: str = "mbs_streaming"
    crossfade_n: int = 81

    def __post_init__(self):
        validate_chunk_ms(self.chunk_ms)
        if self.chunk_ms not in ALLOWED_CHUNK_MS:
            raise InvalidChunkError(f"chunk size must be one of {ALLOWED_CHUNK_MS} ms (a multiple of 40 ms)")
        if self.history_chunks is not None and self.history_chunks < 0:
            raise InvalidSpecError("history_chunks must be >= 0")
        if self.vocoder_mode not in VOCODER_MODES:
            raise InvalidSpecError(f"vocoder mode must be one of {VOCODER_MODES}")
        if self.crossfade_n != 0 and (self.crossfade_n < 3 or self.crossfade_n % 2 == 0):
            raise InvalidSpecError("crossfade window length must be odd and >= 3 (or 0 to disable)")

    @property
    def chunk_frames(self) -> int:
        """Fbank frames (10 ms) per chunk."""
        return self.chunk_ms // 10

    @property
    def ppg_chunk(self) -> int:
        return self.chunk_ms // 40
