"""Multi-band HiFi-GAN style generator with a cache-based streaming variant.

Each upsampling stage is a nearest-neighbour interpolation followed by a
convolution, then a multi-receptive-field block of residual stacks. The head
emits ``bands`` sub-band signals through ``tanh`` and a PQMF bank merges them.

With ``causal=True`` (MBS) every convolution only looks left, so a session fed
one mel frame at a time reproduces :meth:`Vocoder.generate_offline` exactly.
With ``causal=False`` (MB) convolutions are centred; chunked generation then
needs :func:`crossfade_join` to hide joints.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import prod
from typing import Callable, Optional

import numpy as np

from .config import VocoderConfig
from .errors import EmptyInputError, InvalidSpecError, ShapeError, UnsupportedError
from .nn import ConvCache, ConvSpec, as_tensor, conv1d, conv1d_streaming_step, leaky_relu, nearest_upsample
from .pqmf import PqmfBank, StreamingSynthesis, design_bank, synthesis, synthesis_centered

LRELU_SLOPE = 0.1
POST_LRELU_SLOPE = 0.01


def vocoder_schema(cfg: VocoderConfig) -> dict[str, tuple]:
    s = {}
    c_in = cfg.upsample_initial_channel
    s["vocoder.conv_pre.weight"] = (c_in, cfg.n_mels, cfg.pre_kernel)
    s["vocoder.conv_pre.bias"] = (c_in,)
    for i, k_up in enumerate(cfg.upsample_kernels):
        c = cfg.channels(i)
        s[f"vocoder.ups.{i}.weight"] = (c, cfg.channels(i - 1), k_up)
        s[f"vocoder.ups.{i}.bias"] = (c,)
        for j, (k, dils) in enumerate(zip(cfg.resblock_kernel_sizes, cfg.resblock_dilations)):
            for m in range(len(dils)):
                for which in ("convs1", "convs2"):
                    s[f"vocoder.resblocks.{i}.{j}.{which}.{m}.weight"] = (c, c, k)
                    s[f"vocoder.resblocks.{i}.{j}.{which}.{m}.bias"] = (c,)
    c_last = cfg.channels(len(cfg.upsample_factors) - 1)
    s["vocoder.conv_post.weight"] = (cfg.bands, c_last, cfg.post_kernel)
    s["vocoder.conv_post.bias"] = (cfg.bands,)
    return s


ConvFn = Callable[[str, np.ndarray], np.ndarray]


class Vocoder:
    """Generator weights plus offline synthesis.

    Args:
        cfg: Generator configuration; ``cfg.causal`` selects MBS (True) or MB.
        tensors: Canonical ``vocoder.*`` tensors.
    """

    def __init__(self, cfg: VocoderConfig, tensors: dict[str, np.ndarray]):
        self.cfg = cfg.validate()
        self.t = tensors
        self.bank: PqmfBank = design_bank(cfg.bands, cfg.pqmf_taps, cfg.pqmf_cutoff, cfg.pqmf_beta)
        self.specs = self._build_specs(cfg)

    def with_mode(self, causal: bool) -> "Vocoder":
        """Same weights, other padding mode."""
        return Vocoder(replace(self.cfg, causal=causal), self.t)

    @staticmethod
    def _build_specs(cfg: VocoderConfig) -> dict[str, ConvSpec]:
        pad = "valid" if cfg.causal else "same"

        def spec(cin, cout, k, d=1):
            return ConvSpec(cin, cout, k, dilation=d, causal=cfg.causal, padding=pad)

        specs = {"conv_pre": spec(cfg.n_mels, cfg.upsample_initial_channel, cfg.pre_kernel)}
        for i, k_up in enumerate(cfg.upsample_kernels):
            c = cfg.channels(i)
            specs[f"ups.{i}"] = spec(cfg.channels(i - 1), c, k_up)
            for j, (k, dils) in enumerate(zip(cfg.resblock_kernel_sizes, cfg.resblock_dilations)):
                for m, d in enumerate(dils):
                    specs[f"resblocks.{i}.{j}.convs1.{m}"] = spec(c, c, k, d)
                    specs[f"resblocks.{i}.{j}.convs2.{m}"] = spec(c, c, k, 1)
        c_last = cfg.channels(len(cfg.upsample_factors) - 1)
        specs["conv_post"] = spec(c_last, cfg.bands, cfg.post_kernel)
        return specs

    @property
    def samples_per_frame(self) -> int:
        return prod(self.cfg.upsample_factors) * self.cfg.bands

    def subbands(self, mels: np.ndarray, conv: ConvFn) -> np.ndarray:
        """Generator body: ``mels [T, n_mels]`` -> ``[bands, T * prod(factors)]``."""
        cfg = self.cfg
        x = conv("conv_pre", as_tensor(mels).T)
        n_blocks = len(cfg.resblock_kernel_sizes)
        for i, factor in enumerate(cfg.upsample_factors):
            x = leaky_relu(x, LRELU_SLOPE)
            x = conv(f"ups.{i}", nearest_upsample(x, factor))
            acc = None
            for j, dils in enumerate(cfg.resblock_dilations):
                h = x
                for m in range(len(dils)):
                    r = conv(f"resblocks.{i}.{j}.convs1.{m}", leaky_relu(h, LRELU_SLOPE))
                    r = conv(f"resblocks.{i}.{j}.convs2.{m}", leaky_relu(r, LRELU_SLOPE))
                    h = h + r
                acc = h if acc is None else acc + h
            x = (acc / np.float32(n_blocks)).astype(np.float32)
        x = conv("conv_post", leaky_relu(x, POST_LRELU_SLOPE))
        return np.tanh(x)

    def _offline_conv(self, name: str, x: np.ndarray) -> np.ndarray:
        p = f"vocoder.{name}"
        return conv1d(x, self.specs[name], self.t[f"{p}.weight"], self.t[f"{p}.bias"])

    def generate_offline(self, mels: np.ndarray) -> np.ndarray:
        """Waveform for a whole mel sequence ``[T, n_mels]`` (``T * hop`` samples)."""
        mels = as_tensor(mels)
        if mels.ndim != 2 or mels.shape[0] == 0:
            raise EmptyInputError("vocoder needs at least one mel frame")
        if mels.shape[1] != self.cfg.n_mels:
            raise ShapeError(f"expected {self.cfg.n_mels} mel bins, got {mels.shape[1]}")
        sub = self.subbands(mels, self._offline_conv)
        wave = synthesis(sub, self.bank) if self.cfg.causal else synthesis_centered(sub, self.bank)
        return np.clip(wave, -1.0, 1.0)

    def new_session(self) -> "VocoderSession":
        return VocoderSession(self)

    def generate_chunked(
        self, mels: np.ndarray, chunk_frames: int, crossfade: Optional["CrossfadeSpec"] = None
    ) -> np.ndarray:
        """Generate ``chunk_frames`` mel frames at a time and stitch the pieces.

        See :class:`ChunkStitcher` for how pieces overlap.
        """
        mels = as_tensor(mels)
        if mels.ndim != 2 or mels.shape[0] == 0:
            raise EmptyInputError("vocoder needs at least one mel frame")
        if chunk_frames < 1:
            raise InvalidSpecError("chunk_frames must be >= 1")
        stitcher = ChunkStitcher(self, crossfade, min_chunk_frames=chunk_frames)
        parts = [stitcher.push(mels[s : s + chunk_frames]) for s in range(0, mels.shape[0], chunk_frames)]
        parts.append(stitcher.finish())
        return np.concatenate(parts)


class ChunkStitcher:
    """Chunk-wise generation with optional Hanning crossfade at the joints.

    Without a crossfade, each chunk is generated on its own and appended.
    With one, every chunk after the first is generated with
    ``ceil(overlap / hop)`` leading frames of left context, so that its first
    ``overlap`` samples cover the same time span as the held-back tail of the
    previous chunk; the two are blended with :func:`crossfade_join`.
    """

    def __init__(self, vocoder: Vocoder, crossfade: Optional["CrossfadeSpec"] = None, min_chunk_frames: int = 1):
        self.vocoder = vocoder
        self.crossfade = crossfade
        self.hop = vocoder.samples_per_frame
        self.overlap = crossfade.overlap if crossfade is not None else 0
        if self.overlap > min_chunk_frames * self.hop:
            raise InvalidSpecError(f"overlap of {self.overlap} samples exceeds a {min_chunk_frames}-frame chunk")
        self.extra = -(-self.overlap // self.hop)
        self.context = np.zeros((0, vocoder.cfg.n_mels), dtype=np.float32)
        self.tail: Optional[np.ndarray] = None

    def push(self, mels: np.ndarray) -> np.ndarray:
        """Return finished samples; the last ``overlap`` samples are held back."""
        mels = as_tensor(mels)
        if mels.shape[0] == 0:
            return np.zeros(0, dtype=np.float32)
        lead = self.context.shape[0] if self.tail is not None else 0
        if self.tail is not None and lead * self.hop < self.overlap:
            raise InvalidSpecError(f"crossfade overlap of {self.overlap} samples exceeds the audio generated so far")
        piece = self.vocoder.generate_offline(np.concatenate([self.context, mels]) if lead else mels)
        if self.tail is None:
            joined = piece
        else:
            piece = piece[lead * self.hop - self.overlap :]
            joined = crossfade_join(self.tail, piece, self.crossfade)
        if self.extra:
            self.context = np.concatenate([self.context, mels])[-self.extra :]
        keep = len(joined) - self.overlap
        self.tail = joined[keep:]
        return joined[:keep]

    def finish(self) -> np.ndarray:
        tail, self.tail = self.tail, None
        return tail if tail is not None else np.zeros(0, dtype=np.float32)


class VocoderSession:
    """Frame-by-frame causal generation with per-layer left-context caches."""

    def __init__(self, vocoder: Vocoder):
        if not vocoder.cfg.causal:
            raise UnsupportedError("streaming generation requires a causal (MBS) vocoder")
        self.vocoder = vocoder
        self.caches = {name: ConvCache.zeros(spec) for name, spec in vocoder.specs.items()}
        self.pqmf = StreamingSynthesis(vocoder.bank)
        self.frames = 0

    def _conv(self, name: str, x: np.ndarray) -> np.ndarray:
        p = f"vocoder.{name}"
        y, self.caches[name] = conv1d_streaming_step(
            x, self.caches[name], self.vocoder.specs[name], self.vocoder.t[f"{p}.weight"], self.vocoder.t[f"{p}.bias"]
        )
        return y

    def generate_streaming(self, mel: np.ndarray) -> np.ndarray:
        """``hop`` samples per mel frame; accepts one frame ``[n_mels]`` or a block ``[n, n_mels]``."""
        mel = as_tensor(mel)
        if mel.ndim == 1:
            mel = mel[None, :]
        if mel.shape[0] == 0:
            return np.zeros(0, dtype=np.float32)
        if mel.shape[1] != self.vocoder.cfg.n_mels:
            raise ShapeError(f"expected {self.vocoder.cfg.n_mels} mel bins, got {mel.shape[1]}")
        sub = self.vocoder.subbands(mel, self._conv)
        self.frames += mel.shape[0]
        return np.clip(self.pqmf(sub), -1.0, 1.0)

    def reset(self) -> None:
        for c in self.caches.values():
            c.reset()
        self.pqmf.reset()
        self.frames = 0

    def cache_size(self) -> int:
        """Total cached floats; constant for the lifetime of the session."""
        return sum(c.buffer.size for c in self.caches.values()) + self.pqmf.cache.buffer.size


# ------------------------------------------------------------------------ smoothing


def hann_window(n: int) -> np.ndarray:
    """Hanning weights ``w[m] = 0.5 (1 + cos(2 pi m / (N-1)))`` for ``m = -(N-1)/2 .. (N-1)/2``.

    Element ``i`` of the returned array corresponds to ``m = i - (N-1)/2``, so
    the peak ``w[0] = 1`` sits in the middle.
    """
    if n < 3 or n % 2 == 0:
        raise InvalidSpecError(f"window length must be odd and >= 3, got {n}")
    half = (n - 1) // 2
    m = np.arange(-half, half + 1, dtype=np.float64)
    w = 0.5 * (1.0 + np.cos(np.pi * m / half))
    w[0] = w[-1] = 0.0
    w[half] = 1.0
    return w


@dataclass(frozen=True)
class CrossfadeSpec:
    """Overlap stitching for window length ``N``.

    The overlap spans ``(N-1)/2 + 1`` samples (offsets ``0..(N-1)/2`` of the
    half window). ``N = 0`` disables blending (plain concatenation).
    """

    window_length: int

    def __post_init__(self):
        if self.window_length != 0 and (self.window_length < 3 or self.window_length % 2 == 0):
            raise InvalidSpecError("crossfade window length must be odd and >= 3 (or 0)")

    @property
    def overlap(self) -> int:
        return 0 if self.window_length == 0 else (self.window_length - 1) // 2 + 1

    def fade_out(self) -> np.ndarray:
        """Weights on the outgoing chunk: the descending half window, 1 -> 0."""
        if self.window_length == 0:
            return np.zeros(0)
        w = hann_window(self.window_length)
        return w[(self.window_length - 1) // 2 :]

    def fade_in(self) -> np.ndarray:
        return 1.0 - self.fade_out()


def crossfade_join(chunk_t: np.ndarray, chunk_t1: np.ndarray, spec: Optional[CrossfadeSpec]) -> np.ndarray:
    """Join two chunks whose last/first ``spec.overlap`` samples cover the same time span."""
    a = np.asarray(chunk_t, dtype=np.float32)
    b = np.asarray(chunk_t1, dtype=np.float32)
    overlap = spec.overlap if spec is not None else 0
    if overlap == 0:
        return np.concatenate([a, b])
    if overlap > len(a) or overlap > len(b):
        raise InvalidSpecError(f"overlap {overlap} exceeds chunk lengths {len(a)}, {len(b)}")
    fo = spec.fade_out()
    tail, head = a[len(a) - overlap :].astype(np.float64), b[:overlap].astype(np.float64)
    # head + fo*(tail-head) == fo*tail + (1-fo)*head, exact when tail == head
    blend = head + fo * (tail - head)
    return np.concatenate([a[: len(a) - overlap], blend.astype(np.float32), b[overlap:]])


def joint_discontinuity(wave: np.ndarray, joints: list[int], hop: Optional[int] = None) -> tuple[float, float]:
    """Mean absolute sample step at ``joints`` versus the interior.

    A joint ``j`` measures ``|y[j] - y[j-1]|``. With ``hop`` the interior is
    every other multiple of ``hop`` (same phase within the frame, which matters
    because generator output has frame-periodic structure); otherwise it is
    every non-joint position.
    """
    y = np.asarray(wave, dtype=np.float64)
    steps = np.abs(np.diff(y))
    joint_set = {j for j in joints if 0 < j < len(y)}
    if not joint_set:
        raise InvalidSpecError("no joint lies inside the waveform")
    idx = np.asarray(sorted(joint_set), dtype=int) - 1
    if hop is None:
        interior = np.ones(len(steps), dtype=bool)
        interior[idx] = False
        ref = steps[interior]
    else:
        pos = [p for p in range(hop, len(y), hop) if p not in joint_set]
        ref = steps[np.asarray(pos, dtype=int) - 1]
    if ref.size == 0:
        raise InvalidSpecError("no interior positions to compare against")
    return float(steps[idx].mean()), float(ref.mean())


def joint_error(wave: np.ndarray, reference: np.ndarray, joints: list[int], radius: int = 0) -> float:
    """Mean ``|wave - reference|`` within ``radius`` samples of each joint.

    ``reference`` is the same mel sequence generated in one piece.
    """
    y = np.asarray(wave, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if y.shape != r.shape:
        raise ShapeError(f"waveform lengths differ: {y.shape} vs {r.shape}")
    pos = sorted({p for j in joints for p in range(j - radius, j + radius + 1) if 0 <= p < len(y)})
    if not pos:
        raise InvalidSpecError("no joint lies inside the waveform")
    return float(np.abs(y[pos] - r[pos]).mean())
