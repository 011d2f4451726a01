"""Encoder shape, determinism, and gradient tests."""

import numpy as np
import pytest

from specprop import autodiff as ad
from specprop import encoder, synthetic
from specprop.data import sample_episode
from specprop.errors import ShapeError
from specprop.graphnet import ModelConfig, prepare_episode
from specprop.params import ParamStore


def fresh_store(dtype=np.float32, seed=0):
    store = ParamStore(dtype)
    encoder.init_encoder(store, np.random.default_rng(seed))
    return store


@pytest.mark.parametrize("length", [8, 64, 128, 512])
def test_output_shape_is_embed_dim(length):
    store = fresh_store()
    rng = np.random.default_rng(length)
    out = encoder.encode_batch(store, rng.standard_normal((3, length)), training=False)
    assert out.shape == (3, encoder.EMBED_DIM)
    single = encoder.encode(store, rng.standard_normal(length))
    assert single.shape == (encoder.EMBED_DIM,)


def test_short_input_rejected():
    store = fresh_store()
    with pytest.raises(ShapeError):
        encoder.encode_batch(store, np.zeros((1, 7)), training=False)


def test_zero_input_fresh_params_yields_projection_bias():
    # zero biases + zero batchnorm shift: the zero signal stays zero through
    # every block, so the embedding is exactly the projection bias
    store = fresh_store()
    out = encoder.encode_batch(store, np.zeros((2, 32)), training=False)
    bias = store["enc.proj.b"].data
    assert np.array_equal(out.data[0], bias)
    assert np.array_equal(out.data[1], bias)


def test_eval_mode_is_bitwise_deterministic():
    store = fresh_store()
    x = np.random.default_rng(5).standard_normal((4, 48))
    a = encoder.encode_batch(store, x, training=False).data
    b = encoder.encode_batch(store, x, training=False).data
    assert np.array_equal(a, b)


def test_eval_batch_independence():
    # one stream encoded alone equals its row inside a larger batch
    store = fresh_store()
    rng = np.random.default_rng(6)
    batch = rng.standard_normal((5, 40))
    full = encoder.encode_batch(store, batch, training=False).data
    solo = encoder.encode_batch(store, batch[2:3], training=False).data
    assert np.allclose(full[2], solo[0], atol=1e-6)


def test_train_mode_updates_running_stats_eval_does_not():
    store = fresh_store()
    x = np.random.default_rng(7).standard_normal((4, 32))
    before = store.buffers["enc.b0.bn1.mean"].copy()
    encoder.encode_batch(store, x, training=False)
    assert np.array_equal(store.buffers["enc.b0.bn1.mean"], before)
    encoder.encode_batch(store, x, training=True)
    assert not np.array_equal(store.buffers["enc.b0.bn1.mean"], before)


def test_encoder_gradient_matches_finite_differences():
    store = ParamStore(np.float64)
    encoder.init_encoder(store, np.random.default_rng(8),
                         channels=(4, 8), kernel=3, embed_dim=16)
    x = np.random.default_rng(9).standard_normal((3, 16))
    readout = np.random.default_rng(10).standard_normal(16)

    def fn(_):
        out = encoder.encode_batch(store, x, training=True)
        return ad.tsum(out * ad.Tensor(readout))

    inputs = list(store.params.values())
    err = ad.grad_check(fn, inputs, max_coords=6, rng=np.random.default_rng(11))
    assert err < 1e-4, f"encoder grad error {err:.2e}"


def test_encode_episode_shapes_and_twins():
    ds = synthetic.make_separable_dataset(per_class=8, length=32, seed=1)
    ep = sample_episode(ds, 2, 1, 1, np.random.default_rng(0))
    cfg = ModelConfig(num_bands=4, layers=1)
    tensors = prepare_episode(ep, cfg)
    assert tensors.streams.shape == (4, 5, 32)
    store = fresh_store()
    V = encoder.encode_streams(store, tensors.streams, training=False)
    assert V.shape == (4, 5, encoder.EMBED_DIM)
    # duplicated series must embed identically in eval mode
    twin = np.stack([tensors.streams[0], tensors.streams[0]])
    emb = encoder.encode_streams(store, twin, training=False).data
    assert np.array_equal(emb[0], emb[1])


def test_single_band_expansion_duplicates_original_stream():
    ds = synthetic.make_separable_dataset(per_class=6, length=32, seed=2)
    ep = sample_episode(ds, 2, 1, 1, np.random.default_rng(1))
    cfg = ModelConfig(num_bands=1, layers=1)
    tensors = prepare_episode(ep, cfg)
    store = fresh_store()
    V = encoder.encode_streams(store, tensors.streams, training=False).data
    # band 0 equals the original series, so both streams embed the same
    assert np.allclose(V[:, 0, :], V[:, 1, :], atol=1e-5)
