import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamvc.errors import EmptyInputError, InvalidSpecError, ShapeError, UnsupportedError
from streamvc.vocoder import CrossfadeSpec, crossfade_join, hann_window, joint_discontinuity, joint_error


@pytest.fixture(scope="module")
def voc(small_model):
    return small_model.vocoder(causal=True)


@pytest.fixture(scope="module")
def mb(small_model):
    return small_model.vocoder(causal=False)


@pytest.fixture
def mels(rng):
    return rng.standard_normal((50, 80)).astype(np.float32)


def test_length_and_range(voc, mb, mels):
    for v in (voc, mb):
        y = v.generate_offline(mels)
        assert y.shape == (50 * 160,)
        assert np.isfinite(y).all() and np.abs(y).max() <= 1.0


def test_zero_input_zero_bias_is_silent(small_model):
    tensors = {k: (np.zeros_like(v) if k.endswith(".bias") else v) for k, v in small_model.tensors.items()}
    from streamvc.vocoder import Vocoder

    y = Vocoder(small_model.config.vocoder, tensors).generate_offline(np.zeros((5, 80), np.float32))
    assert np.abs(y).max() <= 1.0 and np.ptp(y) == 0.0


def test_one_frame_one_hop(voc, mels):
    sess = voc.new_session()
    assert sess.generate_streaming(mels[0]).shape == (160,)


def test_streaming_equals_offline(backend, voc, mels):
    offline = voc.generate_offline(mels)
    sess = voc.new_session()
    streamed = np.concatenate([sess.generate_streaming(m) for m in mels])
    assert np.abs(streamed - offline).max() <= 1e-6


@settings(max_examples=8, deadline=None)
@given(cuts=st.lists(st.integers(1, 6), min_size=1, max_size=5))
def test_streaming_block_sizes_agree(small_model, cuts):
    voc = small_model.vocoder(causal=True)
    mels = np.random.default_rng(len(cuts)).standard_normal((sum(cuts), 80)).astype(np.float32)
    sess = voc.new_session()
    parts, s = [], 0
    for n in cuts:
        parts.append(sess.generate_streaming(mels[s : s + n]))
        s += n
    assert np.array_equal(np.concatenate(parts), voc.generate_offline(mels))


def test_reset_reproduces_and_cache_is_bounded(voc, mels):
    sess = voc.new_session()
    size = sess.cache_size()
    first = np.concatenate([sess.generate_streaming(m) for m in mels[:10]])
    assert sess.cache_size() == size
    sess.reset()
    again = np.concatenate([sess.generate_streaming(m) for m in mels[:10]])
    assert np.array_equal(first, again)


def test_session_needs_causal(mb):
    with pytest.raises(UnsupportedError):
        mb.new_session()


def test_input_errors(voc):
    with pytest.raises(EmptyInputError):
        voc.generate_offline(np.zeros((0, 80), np.float32))
    with pytest.raises(ShapeError):
        voc.generate_offline(np.zeros((3, 40), np.float32))


# -- window and crossfade -----------------------------------------------------


@pytest.mark.parametrize("n", [3, 5, 9, 81, 161])
def test_hann_endpoints_exact(n):
    w = hann_window(n)
    half = (n - 1) // 2
    assert w[half] == 1.0 and w[0] == 0.0 and w[-1] == 0.0
    assert np.array_equal(w, w[::-1])


def test_hann_five():
    assert hann_window(5).tolist() == [0.0, 0.5, 1.0, 0.5, 0.0]


@pytest.mark.parametrize("n", [0, 2, 4, -3])
def test_hann_rejects_even_or_tiny(n):
    with pytest.raises(InvalidSpecError):
        hann_window(n)


def test_crossfade_spec():
    spec = CrossfadeSpec(5)
    assert spec.overlap == 3
    assert spec.fade_out().tolist() == [1.0, 0.5, 0.0]
    assert np.array_equal(spec.fade_out() + spec.fade_in(), np.ones(3))
    assert CrossfadeSpec(0).overlap == 0
    with pytest.raises(InvalidSpecError):
        CrossfadeSpec(4)


def test_crossfade_ones_into_zeros_gives_fade_out():
    a = np.ones(6, np.float32)
    b = np.zeros(6, np.float32)
    joined = crossfade_join(a, b, CrossfadeSpec(5))
    assert joined.shape == (9,)
    assert joined[3:6].tolist() == [1.0, 0.5, 0.0]


@settings(max_examples=50, deadline=None)
@given(n=st.sampled_from([3, 5, 11, 41, 81]), seed=st.integers(0, 10_000))
def test_crossfade_identical_content_is_lossless(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, 200).astype(np.float32)
    ov = CrossfadeSpec(n).overlap
    joined = crossfade_join(x[:100], x[100 - ov :], CrossfadeSpec(n))
    assert np.array_equal(joined, x)


def test_zero_overlap_concatenates():
    a, b = np.arange(3, dtype=np.float32), np.arange(4, dtype=np.float32)
    assert np.array_equal(crossfade_join(a, b, None), np.concatenate([a, b]))
    assert np.array_equal(crossfade_join(a, b, CrossfadeSpec(0)), np.concatenate([a, b]))


def test_overlap_longer_than_chunk():
    with pytest.raises(InvalidSpecError):
        crossfade_join(np.zeros(2), np.zeros(10), CrossfadeSpec(5))


# -- chunked MB generation ----------------------------------------------------


def test_chunked_without_crossfade_is_independent_pieces(mb, mels):
    y = mb.generate_chunked(mels[:24], 8, None)
    pieces = np.concatenate([mb.generate_offline(mels[s : s + 8]) for s in range(0, 24, 8)])
    assert np.array_equal(y, pieces)


@pytest.mark.parametrize("n", [5, 81, 161, 321])
def test_chunked_length(mb, mels, n):
    assert mb.generate_chunked(mels[:27], 8, CrossfadeSpec(n)).shape == (27 * 160,)


def test_chunk_shorter_than_overlap(mb, mels):
    with pytest.raises(InvalidSpecError):
        mb.generate_chunked(mels, 1, CrossfadeSpec(401))


def test_crossfade_reduces_joint_error():
    # deviation from one-piece generation at the joints, pooled over seeds
    from conftest import small_config
    from streamvc.model_io import random_init

    joints = [k * 8 * 160 for k in range(1, 4)]
    err = {"plain": 0.0, "crossfade": 0.0}
    for seed in range(5):
        mb = random_init(small_config(), seed=seed).vocoder(causal=False)
        mels = np.random.default_rng(seed).standard_normal((32, 80)).astype(np.float32)
        ref = mb.generate_offline(mels)
        err["plain"] += joint_error(mb.generate_chunked(mels, 8, None), ref, joints, radius=2)
        err["crossfade"] += joint_error(mb.generate_chunked(mels, 8, CrossfadeSpec(81)), ref, joints, radius=2)
    assert err["crossfade"] < err["plain"]


def test_crossfade_brings_joint_steps_to_interior_level(mb, mels):
    joints = [k * 8 * 160 for k in range(1, 6)]
    y = mb.generate_chunked(mels[:48], 8, CrossfadeSpec(81))
    j, interior = joint_discontinuity(y, joints, hop=160)
    assert j <= 1.5 * interior


def test_joint_statistics_validation():
    with pytest.raises(InvalidSpecError):
        joint_discontinuity(np.zeros(10), [50])
    with pytest.raises(ShapeError):
        joint_error(np.zeros(10), np.zeros(11), [5])
    assert joint_error(np.arange(10.0), np.arange(10.0), [5], radius=2) == 0.0
