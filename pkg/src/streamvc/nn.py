"""Minimal numeric kernels for streaming inference.

Conventions: sequence tensors for attention/linear layers are ``[T, d]``;
convolution tensors are channels-first ``[C, T]``. Values are stored as
float32; reductions accumulate in float64.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import (
    ContractViolation,
    InsufficientInputError,
    InvalidSpecError,
    ShapeError,
    UnsupportedError,
)

f32 = np.float32


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=f32)


# --------------------------------------------------------------------------- dense


def linear(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """``y[t] = x[t] @ W + b`` for ``x [T, din]``, ``W [din, dout]``."""
    x = np.asarray(x)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: x {x.shape} incompatible with W {w.shape}")
    y = x.astype(np.float64) @ w.astype(np.float64)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} != ({w.shape[1]},)")
        y += b
    return y.astype(f32)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    xd = np.asarray(x, dtype=np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    return ((xd - mu) / np.sqrt(var + eps) * gamma + beta).astype(f32)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, f32(0))


def leaky_relu(x: np.ndarray, slope: float = 0.1) -> np.ndarray:
    return np.where(x > 0, x, x * f32(slope)).astype(f32)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    xd = np.asarray(x, dtype=np.float64)
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    return (e / e.sum(axis=axis, keepdims=True)).astype(f32)


def positional_encoding(offset: int, length: int, dim: int) -> np.ndarray:
    """Sinusoidal encodings for absolute positions ``offset .. offset+length-1``."""
    pos = np.arange(offset, offset + length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-np.log(10000.0) / dim))
    pe = np.zeros((length, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : dim // 2]
    return pe.astype(f32)


# ----------------------------------------------------------------------- attention


@dataclass(frozen=True)
class AttentionWeights:
    """Projection parameters, each weight stored ``[d_in, d_out]``."""

    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def from_tensors(cls, tensors: dict, prefix: str) -> "AttentionWeights":
        kw = {}
        for p in "qkvo":
            kw[f"w{p}"] = tensors[f"{prefix}.{p}.weight"]
            kw[f"b{p}"] = tensors[f"{prefix}.{p}.bias"]
        return cls(**kw)


@dataclass
class AttnCache:
    """Key/value history of one attention layer.

    History is held per chunk so that truncation drops whole chunks only.
    ``max_chunks`` bounds how many past chunks are retained (``None`` keeps
    everything).
    """

    max_chunks: Optional[int] = None
    _keys: deque = field(default_factory=deque, repr=False)
    _values: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if self.max_chunks is not None and self.max_chunks < 0:
            raise InvalidSpecError("max_chunks must be >= 0")

    @property
    def frames(self) -> int:
        return sum(k.shape[1] for k in self._keys)

    @property
    def keys(self) -> Optional[np.ndarray]:
        """``[heads, frames, head_dim]`` or ``None`` when empty."""
        return np.concatenate(list(self._keys), axis=1) if self._keys else None

    @property
    def values(self) -> Optional[np.ndarray]:
        return np.concatenate(list(self._values), axis=1) if self._values else None

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        if self._keys and k.shape[::2] != self._keys[0].shape[::2]:
            raise ShapeError(f"cache holds {self._keys[0].shape}, got {k.shape}")
        self._keys.append(k)
        self._values.append(v)
        if self.max_chunks is not None:
            while len(self._keys) > self.max_chunks:
                self._keys.popleft()
                self._values.popleft()

    def clear(self) -> None:
        self._keys.clear()
        self._values.clear()


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def _check_heads(d: int, heads: int) -> None:
    if heads < 1 or d % heads:
        raise ShapeError(f"model width {d} not divisible by {heads} heads")


def attention_probs(q: np.ndarray, k: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Masked scaled dot-product weights for ``q [H,Tq,dh]``, ``k [H,Tk,dh]``."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = np.matmul(q.astype(np.float64), k.astype(np.float64).transpose(0, 2, 1)) * scale
    return kernels.masked_softmax(scores, mask)


def _attend(q, k, v, mask, weights: AttentionWeights) -> np.ndarray:
    p = attention_probs(q, k, mask)
    ctx = np.matmul(p, v.astype(np.float64)).astype(f32)
    return linear(_merge_heads(ctx), weights.wo, weights.bo)


def masked_mhsa(x: np.ndarray, mask: np.ndarray, weights: AttentionWeights, heads: int) -> np.ndarray:
    """Multi-head self-attention over ``x [T, d]`` restricted by ``mask [T, T]``."""
    x = as_tensor(x)
    t, d = x.shape
    _check_heads(d, heads)
    if weights.dim != d:
        raise ShapeError(f"attention weights expect width {weights.dim}, got {d}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t, t):
        raise ShapeError(f"mask {mask.shape} does not match sequence length {t}")
    q = _split_heads(linear(x, weights.wq, weights.bq), heads)
    k = _split_heads(linear(x, weights.wk, weights.bk), heads)
    v = _split_heads(linear(x, weights.wv, weights.bv), heads)
    return _attend(q, k, v, mask, weights)


def mhsa_streaming_step(
    x_chunk: np.ndarray, cache: AttnCache, weights: AttentionWeights, heads: int
) -> tuple[np.ndarray, AttnCache]:
    """Attend a new chunk over cached history plus itself, then extend the cache.

    Every query of the chunk sees the whole chunk and all retained history,
    which reproduces the chunk mask row block of the offline computation.
    """
    x_chunk = as_tensor(x_chunk)
    c, d = x_chunk.shape
    _check_heads(d, heads)
    if weights.dim != d:
        raise ShapeError(f"attention weights expect width {weights.dim}, got {d}")
    q = _split_heads(linear(x_chunk, weights.wq, weights.bq), heads)
    k_new = _split_heads(linear(x_chunk, weights.wk, weights.bk), heads)
    v_new = _split_heads(linear(x_chunk, weights.wv, weights.bv), heads)
    k_hist, v_hist = cache.keys, cache.values
    if k_hist is not None:
        if k_hist.shape[0] != heads or k_hist.shape[2] != d // heads:
            raise ShapeError(f"cache layout {k_hist.shape} does not match {heads} heads of width {d}")
        k = np.concatenate([k_hist, k_new], axis=1)
        v = np.concatenate([v_hist, v_new], axis=1)
    else:
        k, v = k_new, v_new
    mask = np.ones((c, k.shape[1]), dtype=bool)
    y = _attend(q, k, v, mask, weights)
    cache.append(k_new, v_new)
    return y, cache


# ---------------------------------------------------------------------- convolution


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    dilation: int = 1
    causal: bool = True
    stride: int = 1
    # "valid" applies no padding; "same" pads symmetrically (non-causal vocoder)
    padding: str = "valid"

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_size", "dilation", "stride"):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f"{name} must be positive")
        if self.padding not in ("valid", "same"):
            raise InvalidSpecError(f"unknown padding {self.padding!r}")

    @property
    def context(self) -> int:
        """Left context length ``(k-1) * dilation``."""
        return (self.kernel_size - 1) * self.dilation


@dataclass
class ConvCache:
    """Most recent ``(k-1)*dilation`` input columns of a causal convolution."""

    buffer: np.ndarray

    @classmethod
    def zeros(cls, spec: ConvSpec) -> "ConvCache":
        return cls(np.zeros((spec.in_channels, spec.context), dtype=f32))

    def reset(self) -> None:
        self.buffer[...] = 0


def _check_conv(x: np.ndarray, spec: ConvSpec, w: np.ndarray, b: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[0] != spec.in_channels:
        raise ShapeError(f"conv input {x.shape} expects {spec.in_channels} channels")
    if w.shape != (spec.out_channels, spec.in_channels, spec.kernel_size):
        raise ShapeError(f"conv weight {w.shape} does not match {spec}")
    if b.shape != (spec.out_channels,):
        raise ShapeError(f"conv bias {b.shape} does not match {spec.out_channels}")


def conv1d(x: np.ndarray, spec: ConvSpec, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Offline 1D convolution of ``x [C, T]``.

    Causal mode left-pads with ``(k-1)*dilation`` zeros and yields
    ``ceil(T/stride)`` frames; valid mode pads nothing.
    """
    x = as_tensor(x)
    _check_conv(x, spec, w, b)
    t = x.shape[1]
    if t < 1:
        raise InsufficientInputError("conv1d needs at least one frame")
    if spec.causal:
        x = np.concatenate([np.zeros((x.shape[0], spec.context), dtype=f32), x], axis=1)
    elif spec.padding == "same":
        left = spec.context // 2
        x = np.pad(x, ((0, 0), (left, spec.context - left)))
    elif t < spec.context + 1:
        raise InsufficientInputError(f"valid conv needs {spec.context + 1} frames, got {t}")
    return kernels.conv1d_valid(x, w, b, spec.dilation, spec.stride)


def conv1d_streaming_step(
    x_chunk: np.ndarray, cache: ConvCache, spec: ConvSpec, w: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, ConvCache]:
    """Causal convolution of one chunk using (and refreshing) the left-context cache."""
    if not spec.causal:
        raise UnsupportedError("streaming convolution requires a causal spec")
    x_chunk = as_tensor(x_chunk)
    _check_conv(x_chunk, spec, w, b)
    if x_chunk.shape[1] % spec.stride:
        raise ContractViolation(f"chunk of {x_chunk.shape[1]} frames breaks stride {spec.stride} phase")
    if cache.buffer.shape != (spec.in_channels, spec.context):
        raise ShapeError(f"cache {cache.buffer.shape} does not match {spec}")
    if x_chunk.shape[1] == 0:
        return np.zeros((spec.out_channels, 0), dtype=f32), cache
    xx = np.concatenate([cache.buffer, x_chunk], axis=1)
    y = kernels.conv1d_valid(xx, w, b, spec.dilation, spec.stride)
    if spec.context:
        cache.buffer = np.ascontiguousarray(xx[:, xx.shape[1] - spec.context :])
    return y, cache


def nearest_upsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Repeat every frame of ``x [C, T]`` ``factor`` times along time."""
    if factor < 1:
        raise InvalidSpecError(f"upsample factor must be >= 1, got {factor}")
    return np.repeat(np.asarray(x), factor, axis=-1)
