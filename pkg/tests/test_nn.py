import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamvc import kernels
from streamvc.errors import ContractViolation, InsufficientInputError, InvalidSpecError, ShapeError, UnsupportedError
from streamvc.masking import ChunkSpec, build_chunk_mask, chunk_mask
from streamvc.nn import (AttentionWeights, AttnCache, ConvCache, ConvSpec, conv1d, conv1d_streaming_step,
                         layer_norm, linear, masked_mhsa, mhsa_streaming_step, nearest_upsample,
                         positional_encoding)


def make_weights(d, seed=0):
    rng = np.random.default_rng(seed)
    mats = {}
    for p in "qkvo":
        mats[f"w{p}"] = rng.uniform(-0.3, 0.3, (d, d)).astype(np.float32)
        mats[f"b{p}"] = rng.uniform(-0.1, 0.1, d).astype(np.float32)
    return AttentionWeights(**mats)


# -- linear / norm ------------------------------------------------------------


def test_linear_identity(backend):
    assert linear(np.array([[1.0, 2.0]]), np.eye(2), np.zeros(2)).tolist() == [[1.0, 2.0]]


def test_linear_hand_product(backend):
    y = linear(np.eye(2), np.array([[3.0, 0.0], [0.0, 5.0]]), np.ones(2))
    assert y.tolist() == [[4.0, 1.0], [1.0, 6.0]]


def test_linear_zero_weights_gives_bias(rng):
    y = linear(rng.standard_normal((5, 3)), np.zeros((3, 4)), np.full(4, 2.5))
    assert (y == 2.5).all()


def test_linear_shape_error():
    with pytest.raises(ShapeError):
        linear(np.zeros((2, 3)), np.zeros((4, 2)))


def test_layer_norm_moments(rng):
    y = layer_norm(rng.standard_normal((4, 64)) * 3 + 1, np.ones(64), np.zeros(64))
    assert np.allclose(y.mean(axis=-1), 0, atol=1e-6)
    assert np.allclose(y.std(axis=-1), 1, atol=1e-3)


def test_positional_encoding_offset_is_a_slice():
    full = positional_encoding(0, 20, 16)
    assert np.array_equal(positional_encoding(7, 5, 16), full[7:12])


# -- attention ----------------------------------------------------------------


def test_single_key_passes_value_through(backend, rng):
    w = make_weights(8)
    x = rng.standard_normal((1, 8)).astype(np.float32)
    y = masked_mhsa(x, np.ones((1, 1), bool), w, heads=2)
    v = linear(x, w.wv, w.bv)
    assert np.allclose(y, linear(v, w.wo, w.bo), atol=1e-6)


def test_identical_keys_give_uniform_weights(backend):
    from streamvc.nn import attention_probs

    q = np.random.default_rng(0).standard_normal((2, 5, 4))
    k = np.tile(np.ones((1, 1, 4)), (2, 5, 1))
    p = attention_probs(q, k, np.ones((5, 5), bool))
    assert np.allclose(p, 0.2, atol=1e-12)


def test_chunk_zero_rows_ignore_the_future(backend, rng):
    w = make_weights(8, 1)
    x = rng.standard_normal((6, 8)).astype(np.float32)
    full = masked_mhsa(x, build_chunk_mask(ChunkSpec(2, 3)), w, 2)
    alone = masked_mhsa(x[:2], np.ones((2, 2), bool), w, 2)
    assert np.allclose(full[:2], alone, atol=1e-6)


def test_all_masked_row_is_a_contract_violation(backend):
    mask = np.ones((2, 2), bool)
    mask[1] = False
    with pytest.raises(ContractViolation):
        kernels.masked_softmax(np.zeros((1, 2, 2)), mask)


def test_backends_agree_on_softmax(rng):
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled backend not built")
    s = rng.standard_normal((3, 7, 9)) * 5
    m = rng.random((7, 9)) > 0.4
    m[:, 0] = True
    outs = []
    for be in kernels.available_backends():
        with kernels.use_backend(be):
            outs.append(kernels.masked_softmax(s, m))
    assert np.allclose(outs[0], outs[1], rtol=0, atol=1e-15)


def _stream_attention(x, w, heads, chunk, history):
    cache = AttnCache(history)
    outs = []
    for s in range(0, len(x), chunk):
        y, cache = mhsa_streaming_step(x[s : s + chunk], cache, w, heads)
        outs.append(y)
    return np.concatenate(outs)


def test_first_chunk_equals_offline(backend, rng):
    w = make_weights(16, 2)
    x = rng.standard_normal((4, 16)).astype(np.float32)
    y, cache = mhsa_streaming_step(x, AttnCache(), w, 4)
    assert np.allclose(y, masked_mhsa(x, np.ones((4, 4), bool), w, 4), atol=1e-6)
    assert cache.frames == 4


def test_three_chunks_equal_offline(backend, rng):
    w = make_weights(16, 3)
    x = rng.standard_normal((12, 16)).astype(np.float32)
    streamed = _stream_attention(x, w, 4, 4, None)
    offline = masked_mhsa(x, chunk_mask(12, 4), w, 4)
    assert np.abs(streamed - offline).max() <= 1e-5


def test_history_one_chunk(backend, rng):
    w = make_weights(16, 4)
    x = rng.standard_normal((9, 16)).astype(np.float32)
    streamed = _stream_attention(x, w, 4, 3, 1)
    offline = masked_mhsa(x, chunk_mask(9, 3, 1), w, 4)
    assert np.abs(streamed[6:] - offline[6:]).max() <= 1e-5
    only_12 = masked_mhsa(x[3:], chunk_mask(6, 3), w, 4)
    assert np.abs(streamed[6:] - only_12[3:]).max() <= 1e-5


@settings(max_examples=25, deadline=None)
@given(chunk=st.integers(1, 5), n=st.integers(1, 5), history=st.one_of(st.none(), st.integers(0, 4)),
       seed=st.integers(0, 1000))
def test_streaming_attention_property(chunk, n, history, seed):
    w = make_weights(8, seed)
    x = np.random.default_rng(seed).standard_normal((chunk * n, 8)).astype(np.float32)
    streamed = _stream_attention(x, w, 2, chunk, history)
    offline = masked_mhsa(x, chunk_mask(chunk * n, chunk, history), w, 2)
    assert np.abs(streamed - offline).max() <= 1e-5


def test_cache_keeps_whole_chunks():
    cache = AttnCache(2)
    for t in (3, 1, 2):
        cache.append(np.zeros((2, t, 4)), np.zeros((2, t, 4)))
    assert cache.frames == 3
    cache.clear()
    assert cache.frames == 0 and cache.keys is None


def test_cache_rejects_head_mismatch():
    cache = AttnCache()
    cache.append(np.zeros((2, 1, 4)), np.zeros((2, 1, 4)))
    with pytest.raises(ShapeError):
        cache.append(np.zeros((4, 1, 2)), np.zeros((4, 1, 2)))


def test_heads_must_divide_width(rng):
    with pytest.raises(ShapeError):
        masked_mhsa(rng.standard_normal((2, 6)), np.ones((2, 2), bool), make_weights(6), 4)


# -- convolution --------------------------------------------------------------


def test_identity_kernel(backend, rng):
    x = rng.standard_normal((3, 10)).astype(np.float32)
    spec = ConvSpec(3, 3, 1)
    y = conv1d(x, spec, np.eye(3, dtype=np.float32)[:, :, None], np.zeros(3, np.float32))
    assert np.array_equal(y, x)


@pytest.mark.parametrize("w,expected", [([0.0, 1.0], [1, 2, 3]), ([1.0, 0.0], [0, 1, 2])])
def test_causal_two_tap(backend, w, expected):
    spec = ConvSpec(1, 1, 2)
    y = conv1d(np.array([[1.0, 2.0, 3.0]]), spec, np.array([[w]], np.float32), np.zeros(1, np.float32))
    assert y.tolist() == [expected]


def test_valid_strided_length(backend, rng):
    spec = ConvSpec(2, 2, 3, causal=False, stride=2)
    y = conv1d(rng.standard_normal((2, 7)), spec, np.ones((2, 2, 3), np.float32), np.zeros(2, np.float32))
    assert y.shape == (2, 3)
    with pytest.raises(InsufficientInputError):
        conv1d(rng.standard_normal((2, 2)), spec, np.ones((2, 2, 3), np.float32), np.zeros(2, np.float32))


def test_same_padding_keeps_length(backend, rng):
    spec = ConvSpec(2, 3, 7, dilation=2, causal=False, padding="same")
    w = rng.standard_normal((3, 2, 7)).astype(np.float32)
    y = conv1d(rng.standard_normal((2, 11)), spec, w, np.zeros(3, np.float32))
    assert y.shape == (3, 11)


def test_conv_against_direct_oracle(backend, rng):
    x = rng.standard_normal((3, 20)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    spec = ConvSpec(3, 4, 3, dilation=2)
    y = conv1d(x, spec, w, b)
    xp = np.concatenate([np.zeros((3, 4)), x], axis=1).astype(np.float64)
    ref = np.array([[b[o] + sum(w[o, i, j] * xp[i, t + 2 * j] for i in range(3) for j in range(3))
                     for t in range(20)] for o in range(4)])
    assert np.abs(y - ref).max() <= 1e-5


def _stream_conv(x, spec, w, b, sizes):
    cache = ConvCache.zeros(spec)
    outs, s = [], 0
    for n in sizes:
        y, cache = conv1d_streaming_step(x[:, s : s + n], cache, spec, w, b)
        outs.append(y)
        s += n
    return np.concatenate(outs, axis=1)


def test_streaming_conv_single_frames(backend, rng):
    spec = ConvSpec(4, 5, 3, dilation=2)
    w = rng.standard_normal((5, 4, 3)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    x = rng.standard_normal((4, 30)).astype(np.float32)
    assert np.abs(_stream_conv(x, spec, w, b, [1] * 30) - conv1d(x, spec, w, b)).max() <= 1e-6
    assert np.array_equal(_stream_conv(x, spec, w, b, [30]), conv1d(x, spec, w, b))


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 6), d=st.integers(1, 4), cuts=st.lists(st.integers(1, 7), min_size=1, max_size=6),
       seed=st.integers(0, 10_000))
def test_streaming_conv_property(k, d, cuts, seed):
    rng = np.random.default_rng(seed)
    spec = ConvSpec(3, 2, k, dilation=d)
    w = rng.standard_normal((2, 3, k)).astype(np.float32)
    b = rng.standard_normal(2).astype(np.float32)
    x = rng.standard_normal((3, sum(cuts))).astype(np.float32)
    assert np.abs(_stream_conv(x, spec, w, b, cuts) - conv1d(x, spec, w, b)).max() <= 1e-6


def test_streaming_conv_requires_causal(rng):
    spec = ConvSpec(1, 1, 3, causal=False)
    with pytest.raises(UnsupportedError):
        conv1d_streaming_step(np.zeros((1, 2)), ConvCache(np.zeros((1, 2), np.float32)), spec,
                              np.zeros((1, 1, 3), np.float32), np.zeros(1, np.float32))


def test_strided_stream_phase_violation():
    spec = ConvSpec(1, 1, 3, stride=2)
    with pytest.raises(ContractViolation):
        conv1d_streaming_step(np.zeros((1, 3), np.float32), ConvCache.zeros(spec), spec,
                              np.zeros((1, 1, 3), np.float32), np.zeros(1, np.float32))


def test_conv_spec_validation():
    with pytest.raises(InvalidSpecError):
        ConvSpec(0, 1, 3)
    with pytest.raises(InvalidSpecError):
        ConvSpec(1, 1, 3, padding="reflect")


def test_backends_agree_on_conv(rng):
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled backend not built")
    x = rng.standard_normal((16, 200)).astype(np.float32)
    w = rng.standard_normal((8, 16, 5)).astype(np.float32)
    b = rng.standard_normal(8).astype(np.float32)
    outs = []
    for be in kernels.available_backends():
        with kernels.use_backend(be):
            outs.append(kernels.conv1d_valid(x, w, b, 3, 2))
    assert np.abs(outs[0] - outs[1]).max() <= 1e-5


# -- upsampling ---------------------------------------------------------------


def test_upsample_identity_and_definition():
    x = np.array([[1.0, 2.0]])
    assert np.array_equal(nearest_upsample(x, 1), x)
    assert nearest_upsample(x, 3).tolist() == [[1, 1, 1, 2, 2, 2]]
    with pytest.raises(InvalidSpecError):
        nearest_upsample(x, 0)


@settings(max_examples=30, deadline=None)
@given(factor=st.integers(1, 6), seed=st.integers(0, 1000))
def test_upsample_adds_no_values(factor, seed):
    x = np.random.default_rng(seed).standard_normal((2, 5))
    y = nearest_upsample(x, factor)
    assert y.shape == (2, 5 * factor)
    for c in range(2):
        assert set(y[c]) <= set(x[c])
