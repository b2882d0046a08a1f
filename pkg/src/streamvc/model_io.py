"""Named-tensor model container and seeded initialisation.

File layout (all integers little-endian)::

    magic      4 bytes  b"SVCM"
    version    u32      FORMAT_VERSION
    meta_len   u32      length of the JSON metadata block
    meta       bytes    UTF-8 JSON: {"config": ModelConfig, "extra": {...}}
    count      u32      number of tensors
    directory  count x entry:
                 name_len u16, name (UTF-8), dtype u8 (0 = f32),
                 flags u8 (bit 0 = read-only), ndim u8, shape ndim x u32,
                 offset u64 (from payload start), nbytes u64
    payload    concatenated little-endian float32 data
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .acoustic import AcousticModel, decoder_schema, encoder_schema
from .config import ModelConfig
from .errors import (
    BadMagicError,
    InvalidSpecError,
    MissingTensorError,
    ModelFormatError,
    SchemaError,
    TruncatedFileError,
    VersionError,
)
from .vocoder import Vocoder, vocoder_schema

MAGIC = b"SVCM"
FORMAT_VERSION = 1
DTYPE_F32 = 0
FLAG_READ_ONLY = 1

PathLike = Union[str, Path]


def tensor_schema(cfg: ModelConfig) -> dict[str, tuple]:
    """Canonical tensor names and shapes, in file order."""
    return encoder_schema(cfg.acoustic) | decoder_schema(cfg.acoustic) | vocoder_schema(cfg.vocoder)


def is_read_only(name: str) -> bool:
    # the encoder is a frozen pre-trained component
    return name.startswith("encoder.")


@dataclass
class Model:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, arr in self.tensors.items():
            if is_read_only(name) and arr.flags.writeable:
                arr.setflags(write=False)

    def acoustic(self) -> AcousticModel:
        return AcousticModel(self.config.acoustic, self.tensors)

    def vocoder(self, causal: bool | None = None) -> Vocoder:
        voc = Vocoder(self.config.vocoder, self.tensors)
        return voc if causal is None or causal == voc.cfg.causal else voc.with_mode(causal)

    def validate(self) -> "Model":
        self.config.validate()
        schema = tensor_schema(self.config)
        for name in self.tensors:
            if name not in schema:
                raise SchemaError(f"unknown tensor {name!r}")
        for name, shape in schema.items():
            if name not in self.tensors:
                raise MissingTensorError(f"missing tensor {name!r}")
            arr = self.tensors[name]
            if tuple(arr.shape) != tuple(shape):
                raise SchemaError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
            if arr.dtype != np.float32:
                raise SchemaError(f"tensor {name!r} has dtype {arr.dtype}, expected float32")
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"tensor {name!r} contains non-finite values")
        return self


def random_init(config: ModelConfig | None = None, seed: int = 0) -> Model:
    """Deterministic random weights, uniform in ``+-1/sqrt(fan_in)``.

    Layer-norm gains start at 1 and offsets at 0. Tensors are drawn in schema
    order from one generator, so the result depends only on config and seed.
    """
    config = (config or ModelConfig()).validate()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_schema(config).items():
        if name.endswith(".gamma"):
            arr = np.ones(shape)
        elif name.endswith(".beta"):
            arr = np.zeros(shape)
        else:
            if name.endswith("speaker_embedding"):
                fan_in = 1
            elif len(shape) == 3:
                fan_in = shape[1] * shape[2]
            elif len(shape) == 2:
                fan_in = shape[0]
            else:
                fan_in = _bias_fan_in(name, tensors)
            bound = 1.0 / np.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        tensors[name] = arr.astype(np.float32)
    return Model(config, tensors, {"seed": seed})


def _bias_fan_in(name: str, tensors: dict) -> int:
    # "x.bias" pairs with "x.weight"; "ffn.bN" pairs with "ffn.wN"
    key = name[: -len("bias")] + "weight" if name.endswith(".bias") else name[:-2] + "w" + name[-1]
    w = tensors[key]
    return int(w.shape[1] * w.shape[2]) if w.ndim == 3 else int(w.shape[0])


def save(model: Model, path: PathLike) -> None:
    model.validate()
    meta = json.dumps({"config": model.config.to_dict(), "extra": model.extra}).encode("utf-8")
    directory = bytearray()
    payload = bytearray()
    names = list(tensor_schema(model.config))
    for name in names:
        arr = np.ascontiguousarray(model.tensors[name], dtype="<f4")
        raw = arr.tobytes()
        enc = name.encode("utf-8")
        flags = FLAG_READ_ONLY if is_read_only(name) else 0
        directory += struct.pack("<H", len(enc)) + enc
        directory += struct.pack("<BBB", DTYPE_F32, flags, arr.ndim)
        directory += struct.pack(f"<{arr.ndim}I", *arr.shape)
        directory += struct.pack("<QQ", len(payload), len(raw))
        payload += raw
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(names)))
        fh.write(directory)
        fh.write(payload)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file truncated while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load(path: PathLike) -> Model:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError(f"{path}: not a streamvc model (bad magic)")
    version, meta_len = r.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version}")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt metadata ({exc})") from None
    try:
        config = ModelConfig.from_dict(meta["config"])
    except (KeyError, InvalidSpecError) as exc:
        raise ModelFormatError(f"{path}: invalid config ({exc})") from None
    (count,) = r.unpack("<I", "tensor count")
    entries = []
    for _ in range(count):
        (name_len,) = r.unpack("<H", "directory")
        name = r.take(name_len, "directory").decode("utf-8")
        dtype, flags, ndim = r.unpack("<BBB", "directory")
        shape = r.unpack(f"<{ndim}I", "directory")
        offset, nbytes = r.unpack("<QQ", "directory")
        if dtype != DTYPE_F32:
            raise SchemaError(f"tensor {name!r} has unsupported dtype code {dtype}")
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise SchemaError(f"tensor {name!r}: byte size {nbytes} inconsistent with shape {shape}")
        entries.append((name, flags, shape, offset, nbytes))
    payload = data[r.pos :]
    schema = tensor_schema(config)
    tensors = {}
    spans = []
    for name, flags, shape, offset, nbytes in entries:
        if name not in schema:
            raise SchemaError(f"unknown tensor {name!r}")
        if name in tensors:
            raise SchemaError(f"duplicate tensor {name!r}")
        if offset + nbytes > len(payload):
            raise TruncatedFileError(f"payload truncated in tensor {name!r}")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        arr = arr.astype(np.float32)
        if flags & FLAG_READ_ONLY:
            arr.setflags(write=False)
        tensors[name] = arr
        spans.append((offset, offset + nbytes, name))
    spans.sort()
    for (s0, e0, n0), (s1, _e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ModelFormatError(f"tensors {n0!r} and {n1!r} overlap in the payload")
    if spans and spans[-1][1] != len(payload):
        raise ModelFormatError("payload length inconsistent with tensor directory")
    return Model(config, tensors, meta.get("extra", {})).validate()


def load_config(path: PathLike) -> ModelConfig:
    """Read a standalone JSON config (same schema as the metadata ``config`` block)."""
    return ModelConfig.from_json(Path(path).read_text())
