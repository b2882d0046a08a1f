"""Streaming any-to-many voice conversion inference runtime.

Chunk-masked transformer encoder to phonetic posteriorgrams, a causal FFT
decoder to mel frames, and a multi-band vocoder with PQMF synthesis that can
run frame by frame.
"""

from .config import AcousticConfig, ModelConfig, RuntimeConfig, VocoderConfig
from .errors import StreamVCError
from .masking import ChunkSpec, build_chunk_mask
from .metrics import LatencyReport, latency_report
from .model_io import Model, load, random_init, save
from .pipeline import StreamingConverter, convert

__version__ = "0.1.0"

__all__ = [
    "AcousticConfig",
    "ChunkSpec",
    "LatencyReport",
    "Model",
    "ModelConfig",
    "RuntimeConfig",
    "StreamVCError",
    "StreamingConverter",
    "VocoderConfig",
    "build_chunk_mask",
    "convert",
    "latency_report",
    "load",
    "random_init",
    "save",
]
