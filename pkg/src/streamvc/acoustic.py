"""Streaming acoustic model: fbank -> PPG encoder -> speaker-conditioned mel decoder.

The encoder is a two-layer valid-convolution subsampler (k=3, s=2 twice, so
one PPG frame per 4 fbank frames and a 7-frame receptive field) followed by
pre-norm transformer layers with chunk-masked self-attention. The decoder
repeats each PPG frame 4 times, adds a speaker embedding and runs post-norm
FFT blocks whose convolutions are causal.

Both halves exist in two forms that must agree: an offline pass over a whole
utterance with a chunk mask, and a stateful session fed chunk by chunk.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import FBANK_DIM, LOOKAHEAD_FRAMES, SUBSAMPLING, AcousticConfig, validate_chunk_ms
from .errors import ContractViolation, InvalidChunkError, InvalidSpeakerError, ShapeError
from .masking import chunk_mask
from .nn import (
    AttentionWeights,
    AttnCache,
    ConvCache,
    ConvSpec,
    as_tensor,
    conv1d,
    conv1d_streaming_step,
    layer_norm,
    linear,
    masked_mhsa,
    mhsa_streaming_step,
    positional_encoding,
    relu,
    softmax,
)

RECEPTIVE_FIELD = 7  # 3 + 2 * (3 - 1)


def encoder_schema(cfg: AcousticConfig) -> dict[str, tuple]:
    d, f = cfg.d_model, cfg.encoder_ffn
    s = {
        "encoder.subsample.conv1.weight": (d, cfg.n_mels, 3),
        "encoder.subsample.conv1.bias": (d,),
        "encoder.subsample.conv2.weight": (d, d, 3),
        "encoder.subsample.conv2.bias": (d,),
        "encoder.subsample.out.weight": (d, d),
        "encoder.subsample.out.bias": (d,),
    }
    for i in range(cfg.encoder_layers):
        p = f"encoder.layers.{i}"
        s |= _norm_schema(f"{p}.norm1", d) | _attn_schema(f"{p}.attn", d) | _norm_schema(f"{p}.norm2", d)
        s |= {f"{p}.ffn.w1": (d, f), f"{p}.ffn.b1": (f,), f"{p}.ffn.w2": (f, d), f"{p}.ffn.b2": (d,)}
    s |= _norm_schema("encoder.final_norm", d)
    s |= {"encoder.ppg.weight": (d, cfg.num_phones), "encoder.ppg.bias": (cfg.num_phones,)}
    return s


def decoder_schema(cfg: AcousticConfig) -> dict[str, tuple]:
    d, f, k = cfg.d_model, cfg.decoder_conv_filter, cfg.decoder_conv_kernel
    s = {
        "decoder.in_proj.weight": (cfg.num_phones, d),
        "decoder.in_proj.bias": (d,),
        "decoder.speaker_embedding": (cfg.num_speakers, d),
    }
    for i in range(cfg.decoder_layers):
        p = f"decoder.layers.{i}"
        s |= _attn_schema(f"{p}.attn", d) | _norm_schema(f"{p}.norm1", d)
        s |= {
            f"{p}.conv1.weight": (f, d, k),
            f"{p}.conv1.bias": (f,),
            f"{p}.conv2.weight": (d, f, 1),
            f"{p}.conv2.bias": (d,),
        }
        s |= _norm_schema(f"{p}.norm2", d)
    s |= {"decoder.mel_out.weight": (d, cfg.n_mels), "decoder.mel_out.bias": (cfg.n_mels,)}
    return s


def _norm_schema(p: str, d: int) -> dict:
    return {f"{p}.gamma": (d,), f"{p}.beta": (d,)}


def _attn_schema(p: str, d: int) -> dict:
    return {f"{p}.{x}.{y}": ((d, d) if y == "weight" else (d,)) for x in "qkvo" for y in ("weight", "bias")}


def _norm(t: dict, p: str, x: np.ndarray) -> np.ndarray:
    return layer_norm(x, t[f"{p}.gamma"], t[f"{p}.beta"])


class AcousticModel:
    """Weights plus offline (whole-utterance) inference.

    Args:
        cfg: Architecture configuration.
        tensors: Mapping of canonical tensor names to float32 arrays.
    """

    def __init__(self, cfg: AcousticConfig, tensors: dict[str, np.ndarray]):
        self.cfg = cfg.validate()
        self.t = tensors
        d = cfg.d_model
        self.sub1 = ConvSpec(cfg.n_mels, d, 3, causal=False, stride=2)
        self.sub2 = ConvSpec(d, d, 3, causal=False, stride=2)
        self.dec_conv1 = ConvSpec(d, cfg.decoder_conv_filter, cfg.decoder_conv_kernel, causal=True)
        self.dec_conv2 = ConvSpec(cfg.decoder_conv_filter, d, 1, causal=True)
        self.enc_attn = [AttentionWeights.from_tensors(tensors, f"encoder.layers.{i}.attn") for i in range(cfg.encoder_layers)]
        self.dec_attn = [AttentionWeights.from_tensors(tensors, f"decoder.layers.{i}.attn") for i in range(cfg.decoder_layers)]

    # -- shared pieces ------------------------------------------------------

    def subsample_frames(self, fbank: np.ndarray) -> np.ndarray:
        """Valid-mode subsampling of ``fbank [T, 80]`` to ``[(T-7)//4 + 1, d]``."""
        t = self.t
        x = as_tensor(fbank).T
        h = relu(conv1d(x, self.sub1, t["encoder.subsample.conv1.weight"], t["encoder.subsample.conv1.bias"]))
        h = relu(conv1d(h, self.sub2, t["encoder.subsample.conv2.weight"], t["encoder.subsample.conv2.bias"]))
        return linear(h.T, t["encoder.subsample.out.weight"], t["encoder.subsample.out.bias"])

    def _enc_ffn(self, i: int, x: np.ndarray) -> np.ndarray:
        t, p = self.t, f"encoder.layers.{i}"
        h = relu(linear(_norm(t, f"{p}.norm2", x), t[f"{p}.ffn.w1"], t[f"{p}.ffn.b1"]))
        return x + linear(h, t[f"{p}.ffn.w2"], t[f"{p}.ffn.b2"])

    def _enc_head(self, x: np.ndarray) -> np.ndarray:
        t = self.t
        logits = linear(_norm(t, "encoder.final_norm", x), t["encoder.ppg.weight"], t["encoder.ppg.bias"])
        return softmax(logits) if self.cfg.ppg_softmax else logits

    def _dec_input(self, ppg: np.ndarray, speaker: int, offset: int) -> np.ndarray:
        t = self.t
        x = np.repeat(as_tensor(ppg), SUBSAMPLING, axis=0)
        h = linear(x, t["decoder.in_proj.weight"], t["decoder.in_proj.bias"])
        h = h + t["decoder.speaker_embedding"][speaker]
        return h + positional_encoding(offset, h.shape[0], self.cfg.d_model)

    def _dec_conv_block(self, i: int, x: np.ndarray, conv) -> np.ndarray:
        t, p = self.t, f"decoder.layers.{i}"
        h = relu(conv(x.T, self.dec_conv1, t[f"{p}.conv1.weight"], t[f"{p}.conv1.bias"], (i, 1)))
        h = conv(h, self.dec_conv2, t[f"{p}.conv2.weight"], t[f"{p}.conv2.bias"], (i, 2))
        return _norm(t, f"{p}.norm2", x + h.T)

    def _mel_out(self, x: np.ndarray) -> np.ndarray:
        return linear(x, self.t["decoder.mel_out.weight"], self.t["decoder.mel_out.bias"])

    def check_speaker(self, speaker: int) -> int:
        if not 0 <= int(speaker) < self.cfg.num_speakers:
            raise InvalidSpeakerError(f"speaker id {speaker} outside [0, {self.cfg.num_speakers})")
        return int(speaker)

    # -- offline ---------------------------------------------------------------

    def encode_offline(self, fbank: np.ndarray, chunk_ppg: int, history_chunks: Optional[int]) -> np.ndarray:
        """PPGs for a whole utterance under a chunk mask of ``chunk_ppg`` frames."""
        x = self.subsample_frames(fbank)
        x = x + positional_encoding(0, x.shape[0], self.cfg.d_model)
        mask = chunk_mask(x.shape[0], chunk_ppg, history_chunks)
        for i, w in enumerate(self.enc_attn):
            x = x + masked_mhsa(_norm(self.t, f"encoder.layers.{i}.norm1", x), mask, w, self.cfg.heads)
            x = self._enc_ffn(i, x)
        return self._enc_head(x)

    def decode_offline(self, ppg: np.ndarray, speaker: int, chunk_ppg: int, history_chunks: Optional[int]) -> np.ndarray:
        speaker = self.check_speaker(speaker)
        x = self._dec_input(ppg, speaker, 0)
        mask = chunk_mask(x.shape[0], chunk_ppg * SUBSAMPLING, history_chunks)

        def conv(h, spec, w, b, _key):
            return conv1d(h, spec, w, b)

        for i, w in enumerate(self.dec_attn):
            x = _norm(self.t, f"decoder.layers.{i}.norm1", x + masked_mhsa(x, mask, w, self.cfg.heads))
            x = self._dec_conv_block(i, x, conv)
        return self._mel_out(x)

    def convert_offline(
        self, fbank: np.ndarray, speaker: int, chunk_ms: int, history_chunks: Optional[int] = 10, pad_tail: bool = False
    ) -> np.ndarray:
        """Offline reference for a streamed conversion (fbank -> mel)."""
        validate_chunk_ms(chunk_ms)
        fbank = pad_lookahead(fbank) if pad_tail else as_tensor(fbank)
        n = chunk_ms // 40
        return self.decode_offline(self.encode_offline(fbank, n, history_chunks), speaker, n, history_chunks)


def pad_lookahead(fbank: np.ndarray) -> np.ndarray:
    """Pad the end of ``fbank`` so that every input frame reaches a PPG frame.

    After padding, the subsampler yields ``ceil(T/4)`` frames. The last frame
    is repeated (zeros for empty input).
    """
    fbank = as_tensor(fbank).reshape(-1, FBANK_DIM)
    t = fbank.shape[0]
    extra = SUBSAMPLING * (-(-t // SUBSAMPLING)) + LOOKAHEAD_FRAMES - t
    fill = fbank[-1:] if t else np.zeros((1, FBANK_DIM), dtype=np.float32)
    return np.concatenate([fbank, np.repeat(fill, extra, axis=0)], axis=0)


@dataclass
class _Counters:
    frames_consumed: int = 0
    ppg_emitted: int = 0
    mel_emitted: int = 0
    enc_position: int = 0
    dec_position: int = 0


class AcousticSession:
    """Chunk-by-chunk encoder + decoder state for one stream and one target speaker.

    A session is single-owner mutable state. Fbank frames may be pushed at any
    granularity with :meth:`accept_frames`; PPG frames are released in groups
    of ``chunk_ms / 40`` once the subsampler has produced them, so the first
    group needs ``chunk_ms + 30 ms`` of input.
    """

    def __init__(self, model: AcousticModel, speaker: int, chunk_ms: int = 160, history_chunks: Optional[int] = 10):
        self.model = model
        self.cfg = model.cfg
        self.speaker = model.check_speaker(speaker)
        self.chunk_ms = validate_chunk_ms(chunk_ms)
        self.chunk_ppg = chunk_ms // 40
        self.history_chunks = history_chunks
        self.reset()

    def reset(self) -> "AcousticSession":
        cfg = self.cfg
        self.fbank_buffer = np.zeros((0, cfg.n_mels), dtype=np.float32)
        self.enc_pending = np.zeros((0, cfg.d_model), dtype=np.float32)
        self.dec_pending = np.zeros((0, cfg.num_phones), dtype=np.float32)
        self.enc_caches = [AttnCache(self.history_chunks) for _ in range(cfg.encoder_layers)]
        self.dec_caches = [AttnCache(self.history_chunks) for _ in range(cfg.decoder_layers)]
        self.conv_caches = {}
        for i in range(cfg.decoder_layers):
            self.conv_caches[(i, 1)] = ConvCache.zeros(self.model.dec_conv1)
            self.conv_caches[(i, 2)] = ConvCache.zeros(self.model.dec_conv2)
        self._last_frame = np.zeros((1, cfg.n_mels), dtype=np.float32)
        self.counters = _Counters()
        self.finished = False
        return self

    # -- encoder -------------------------------------------------------------

    def _subsample(self, frames: np.ndarray) -> None:
        frames = as_tensor(frames)
        if frames.ndim != 2 or frames.shape[1] != self.cfg.n_mels:
            raise ShapeError(f"expected fbank frames [T, {self.cfg.n_mels}], got {frames.shape}")
        self.counters.frames_consumed += frames.shape[0]
        if frames.shape[0]:
            self._last_frame = frames[-1:].copy()
        buf = np.concatenate([self.fbank_buffer, frames], axis=0)
        if buf.shape[0] >= RECEPTIVE_FIELD:
            m = (buf.shape[0] - RECEPTIVE_FIELD) // SUBSAMPLING + 1
            used = SUBSAMPLING * (m - 1) + RECEPTIVE_FIELD
            out = self.model.subsample_frames(buf[:used])
            self.enc_pending = np.concatenate([self.enc_pending, out], axis=0)
            buf = buf[SUBSAMPLING * m :]
        self.fbank_buffer = np.ascontiguousarray(buf)

    def _encode_block(self, x: np.ndarray) -> np.ndarray:
        m, c = self.model, self.counters
        x = x + positional_encoding(c.enc_position, x.shape[0], self.cfg.d_model)
        c.enc_position += x.shape[0]
        for i, w in enumerate(m.enc_attn):
            a, _ = mhsa_streaming_step(_norm(m.t, f"encoder.layers.{i}.norm1", x), self.enc_caches[i], w, self.cfg.heads)
            x = m._enc_ffn(i, x + a)
        ppg = m._enc_head(x)
        c.ppg_emitted += ppg.shape[0]
        return ppg

    def _drain_encoder(self, final: bool) -> np.ndarray:
        out = []
        n = self.chunk_ppg
        while self.enc_pending.shape[0] >= n or (final and self.enc_pending.shape[0]):
            block, self.enc_pending = self.enc_pending[:n], self.enc_pending[n:]
            out.append(self._encode_block(block))
        if not out:
            return np.zeros((0, self.cfg.num_phones), dtype=np.float32)
        return np.concatenate(out, axis=0)

    def accept_frames(self, frames: np.ndarray) -> np.ndarray:
        """Push any number of fbank frames; return newly available PPG frames."""
        self._check_open()
        self._subsample(frames)
        return self._drain_encoder(final=False)

    def encode_chunk(self, frames: np.ndarray) -> np.ndarray:
        """Push one chunk (a positive multiple of 4 fbank frames = 40 ms)."""
        frames = as_tensor(frames)
        if frames.ndim != 2 or frames.shape[0] == 0 or frames.shape[0] % SUBSAMPLING:
            raise InvalidChunkError(
                f"chunk must be a positive multiple of 40 ms (4 frames), got {frames.shape[0]} frames"
            )
        return self.accept_frames(frames)

    # -- decoder -------------------------------------------------------------

    def _decode_block(self, ppg: np.ndarray) -> np.ndarray:
        m, c = self.model, self.counters
        x = m._dec_input(ppg, self.speaker, c.dec_position)
        c.dec_position += x.shape[0]

        def conv(h, spec, w, b, key):
            y, self.conv_caches[key] = conv1d_streaming_step(h, self.conv_caches[key], spec, w, b)
            return y

        for i, w in enumerate(m.dec_attn):
            a, _ = mhsa_streaming_step(x, self.dec_caches[i], w, self.cfg.heads)
            x = _norm(m.t, f"decoder.layers.{i}.norm1", x + a)
            x = m._dec_conv_block(i, x, conv)
        mel = m._mel_out(x)
        c.mel_emitted += mel.shape[0]
        return mel

    def _drain_decoder(self, final: bool) -> np.ndarray:
        out = []
        n = self.chunk_ppg
        while self.dec_pending.shape[0] >= n or (final and self.dec_pending.shape[0]):
            block, self.dec_pending = self.dec_pending[:n], self.dec_pending[n:]
            out.append(self._decode_block(block))
        if not out:
            return np.zeros((0, self.cfg.n_mels), dtype=np.float32)
        return np.concatenate(out, axis=0)

    def decode_chunk(self, ppgs: np.ndarray, speaker: Optional[int] = None) -> np.ndarray:
        """Feed PPG frames; returns 4 mel frames per PPG frame once a decoder chunk is complete."""
        self._check_open()
        if speaker is not None and self.model.check_speaker(speaker) != self.speaker:
            raise ContractViolation("a session's target speaker cannot change mid-stream")
        ppgs = as_tensor(ppgs).reshape(-1, self.cfg.num_phones)
        self.dec_pending = np.concatenate([self.dec_pending, ppgs], axis=0)
        return self._drain_decoder(final=False)

    # -- whole pipeline ------------------------------------------------------

    def process(self, frames: np.ndarray) -> np.ndarray:
        """fbank frames in, mel frames out (whatever is ready)."""
        return self.decode_chunk(self.accept_frames(frames))

    def flush(self, pad: bool = True) -> np.ndarray:
        """Finish the stream, emitting every pending frame.

        With ``pad`` the input is extended as in :func:`pad_lookahead`, so the
        total mel output covers ``4 * ceil(T/4)`` frames for ``T`` input frames.
        """
        self._check_open()
        if pad:
            t = self.counters.frames_consumed
            extra = SUBSAMPLING * (-(-t // SUBSAMPLING)) + LOOKAHEAD_FRAMES - t
            self._subsample(np.repeat(self._last_frame, extra, axis=0))
        ppg = self._drain_encoder(final=True)
        self.dec_pending = np.concatenate([self.dec_pending, ppg], axis=0)
        mel = self._drain_decoder(final=True)
        self.finished = True
        return mel

    def _check_open(self) -> None:
        if self.finished:
            raise ContractViolation("session already flushed; call reset() first")

    def cache_frames(self) -> dict[str, int]:
        """Current cache occupancy (frames) for memory-bound checks."""
        return {
            "encoder_attn": max((c.frames for c in self.enc_caches), default=0),
            "decoder_attn": max((c.frames for c in self.dec_caches), default=0),
            "fbank_buffer": self.fbank_buffer.shape[0],
            "encoder_pending": self.enc_pending.shape[0],
        }
