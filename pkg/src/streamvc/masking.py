"""Chunk-based attention masks.

A chunk mask lets every query frame see all frames of its own chunk and of a
bounded number of preceding chunks. The full-history mask is the Kronecker
product of a lower-triangular chunk connectivity matrix with an all-ones
``c x c`` block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidRangeError, InvalidSpecError


@dataclass(frozen=True)
class ChunkSpec:
    """Chunk layout of a sequence.

    Attributes:
        chunk_frames: Frames per chunk.
        num_chunks: Number of chunks. Ignored by :func:`build_chunk_mask` when
            an explicit ``num_frames`` is given.
        history_chunks: Number of preceding chunks visible to a query.
            ``None`` means unlimited history.
    """

    chunk_frames: int
    num_chunks: int
    history_chunks: Optional[int] = None

    def __post_init__(self):
        if self.chunk_frames < 1:
            raise InvalidSpecError(f"chunk_frames must be >= 1, got {self.chunk_frames}")
        if self.num_chunks < 1:
            raise InvalidSpecError(f"num_chunks must be >= 1, got {self.num_chunks}")
        if self.history_chunks is not None and self.history_chunks < 0:
            raise InvalidSpecError(f"history_chunks must be >= 0, got {self.history_chunks}")

    @property
    def size(self) -> int:
        return self.chunk_frames * self.num_chunks


def build_chunk_mask(spec: ChunkSpec, num_frames: Optional[int] = None) -> np.ndarray:
    """Return the ``T x T`` boolean mask for ``spec`` (row = query, column = key).

    ``num_frames`` overrides ``T = chunk_frames * num_chunks``; a value that is
    not a multiple of ``chunk_frames`` yields a shorter final chunk.
    """
    c = spec.chunk_frames
    t = spec.size if num_frames is None else int(num_frames)
    if t < 1:
        raise InvalidSpecError(f"mask needs at least one frame, got {t}")
    chunk = np.arange(t) // c
    diff = chunk[:, None] - chunk[None, :]
    bits = diff >= 0
    if spec.history_chunks is not None:
        bits &= diff <= spec.history_chunks
    return bits


def chunk_mask(num_frames: int, chunk_frames: int, history_chunks: Optional[int] = None) -> np.ndarray:
    """Convenience wrapper building a mask for an arbitrary sequence length."""
    num_chunks = max(1, -(-num_frames // chunk_frames))
    return build_chunk_mask(ChunkSpec(chunk_frames, num_chunks, history_chunks), num_frames)


def format_mask(bits: np.ndarray) -> str:
    """Render a mask as rows of ``0``/``1`` characters."""
    return "\n".join("".join("1" if v else "0" for v in row) for row in np.asarray(bits))


def sample_dynamic_chunk(range_min: int, range_max: int, rng_seed: int | np.random.Generator) -> int:
    """Draw a chunk size uniformly from ``[range_min, range_max]``.

    ``rng_seed`` may be an integer seed or an existing generator; passing a
    generator lets callers draw a reproducible sequence.
    """
    if range_min < 1 or range_max < 1:
        raise InvalidRangeError("chunk range bounds must be positive")
    if range_min > range_max:
        raise InvalidRangeError(f"range_min {range_min} > range_max {range_max}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return int(rng.integers(range_min, range_max + 1))
