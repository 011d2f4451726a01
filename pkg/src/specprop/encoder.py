"""Residual 1-D convolutional feature extractor.

Four residual blocks (two Conv-BN-ReLU layers plus a projected skip, then
mean-pool by 2), a global mean-pool over the remaining positions, and a
fully-connected projection to the embedding. Channel widths and kernel
size are configurable; the defaults end at a 128-dimensional embedding
for any input length >= 8.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import spectral
from .errors import ShapeError
from .params import add_batchnorm, add_conv, add_linear

DEFAULT_CHANNELS = (16, 32, 64, 128)
DEFAULT_KERNEL = 5
EMBED_DIM = 128


def init_encoder(store, rng, channels=DEFAULT_CHANNELS, kernel=DEFAULT_KERNEL,
                 embed_dim=EMBED_DIM, prefix="enc"):
    c_in = 1
    for b, c_out in enumerate(channels):
        add_conv(store, rng, f"{prefix}.b{b}.conv1", c_out, c_in, kernel)
        add_batchnorm(store, f"{prefix}.b{b}.bn1", c_out)
        add_conv(store, rng, f"{prefix}.b{b}.conv2", c_out, c_out, kernel)
        add_batchnorm(store, f"{prefix}.b{b}.bn2", c_out)
        add_conv(store, rng, f"{prefix}.b{b}.skip", c_out, c_in, 1)
        c_in = c_out
    add_linear(store, rng, f"{prefix}.proj", c_in, embed_dim)


def _bn(store, name, x, training):
    return ad.batchnorm(x, store[name + ".gamma"], store[name + ".beta"],
                        store.buffers[name + ".mean"], store.buffers[name + ".var"],
                        training=training)


def num_blocks(store, prefix="enc"):
    b = 0
    while f"{prefix}.b{b}.conv1.w" in store.params:
        b += 1
    return b


def encode_batch(store, x, training, prefix="enc"):
    """Embed a batch of single-channel series. x: (B, L) array or Tensor."""
    x = ad.Tensor(np.asarray(x, dtype=store.dtype)) if not isinstance(x, ad.Tensor) else x
    if x.data.ndim != 2 or x.shape[1] < 8:
        raise ShapeError(f"encode_batch: need (B, L>=8) input, got {x.shape}")
    B, L = x.shape
    h = ad.reshape(x, (B, 1, L))
    for b in range(num_blocks(store, prefix)):
        p = f"{prefix}.b{b}"
        y = ad.relu(_bn(store, f"{p}.bn1", ad.conv1d(h, store[f"{p}.conv1.w"], store[f"{p}.conv1.b"]), training))
        y = ad.relu(_bn(store, f"{p}.bn2", ad.conv1d(y, store[f"{p}.conv2.w"], store[f"{p}.conv2.b"]), training))
        h = y + ad.conv1d(h, store[f"{p}.skip.w"], store[f"{p}.skip.b"])
        h = ad.meanpool2(h)
    pooled = ad.tmean(h, axis=2)
    return ad.matmul(pooled, store[f"{prefix}.proj.w"]) + store[f"{prefix}.proj.b"]


def encode(store, values, training=False):
    """Embedding of one series: (embed_dim,) tensor."""
    out = encode_batch(store, np.asarray(values)[None, :], training)
    return ad.reshape(out, (out.shape[1],))


def instance_streams(values_matrix, num_bands, strategy):
    """Spectral expansion of every series: (n, num_bands + 1, L) float64."""
    return np.stack([
        spectral.expand(row, num_bands, strategy).streams()
        for row in np.asarray(values_matrix)
    ])


def encode_streams(store, streams, training):
    """Embed every (instance, stream) pair with the shared encoder.

    streams: (n, S, L) array. Returns a (n, S, embed_dim) tensor; the whole
    block is one batch, so train-mode batchnorm statistics pool across all
    instances and streams of the episode.
    """
    n, S, L = streams.shape
    flat = streams.reshape(n * S, L).astype(store.dtype)
    emb = encode_batch(store, flat, training)
    return ad.reshape(emb, (n, S, emb.shape[1]))
