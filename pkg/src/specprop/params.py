"""Named parameter/buffer store shared by the encoder and graph model.

Parameters are autodiff tensors; buffers are plain numpy arrays (batchnorm
running statistics). Creation order is deterministic so a seeded generator
reproduces initialization bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor, load_checkpoint, save_checkpoint


class ParamStore:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.buffers = {}

    def add_param(self, name, array):
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def add_buffer(self, name, array):
        buf = np.asarray(array, dtype=self.dtype).copy()
        self.buffers[name] = buf
        return buf

    def __getitem__(self, name):
        return self.params[name]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def num_values(self):
        return sum(p.data.size for p in self.params.values())

    def state_arrays(self):
        out = {name: p.data for name, p in self.params.items()}
        for name, buf in self.buffers.items():
            out["buffer:" + name] = buf
        return out

    def load_state(self, arrays):
        for name, p in self.params.items():
            p.data = np.asarray(arrays[name], dtype=self.dtype).reshape(p.data.shape)
        for name, buf in self.buffers.items():
            buf[...] = np.asarray(arrays["buffer:" + name], dtype=self.dtype).reshape(buf.shape)

    def save(self, path):
        save_checkpoint(path, self.state_arrays())

    def load(self, path):
        self.load_state(load_checkpoint(path))

    def checksum(self):
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name].data).tobytes())
        for name in sorted(self.buffers):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.buffers[name]).tobytes())
        return digest.hexdigest()


def fan_in_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def add_conv(store, rng, name, c_out, c_in, kernel):
    store.add_param(name + ".w", fan_in_uniform(rng, (c_out, c_in, kernel), c_in * kernel))
    store.add_param(name + ".b", np.zeros(c_out))


def add_linear(store, rng, name, n_in, n_out):
    """Weight laid out (n_in, n_out) so the forward is x @ w + b."""
    store.add_param(name + ".w", fan_in_uniform(rng, (n_in, n_out), n_in))
    store.add_param(name + ".b", np.zeros(n_out))


def add_batchnorm(store, name, channels):
    store.add_param(name + ".gamma", np.ones(channels))
    store.add_param(name + ".beta", np.zeros(channels))
    store.add_buffer(name + ".mean", np.zeros(channels))
    store.add_buffer(name + ".var", np.ones(channels))
