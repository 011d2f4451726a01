"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Define-by-run: every op records its inputs and a backward closure on the
result tensor; ``backward`` walks the recorded graph once in reverse
topological order. Gradients accumulate into ``Tensor.grad``.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, ShapeError

PROB_CLAMP = 1e-12

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (evaluation paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense real array plus optional gradient buffer and graph links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # scalar/elementwise operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_ensure(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, leaves=None):
        backward(self, leaves=leaves)


def parameter(data, dtype=np.float32):
    """A leaf tensor that receives gradients."""
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def _ensure(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True).reshape(t.data.shape)
    else:
        t.grad += g.reshape(t.data.shape)


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward op."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / broadcast ops

def add(a, b):
    a, b = _ensure(a), _ensure(b, like=a)

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = _ensure(a), _ensure(b, like=a)

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = _ensure(a), _ensure(b, like=a)

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), back)


def div(a, b):
    a, b = _ensure(a), _ensure(b, like=a)

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), back)


def square(a):
    a = _ensure(a)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), back)


def sqrt(a, eps=0.0):
    a = _ensure(a)
    y = np.sqrt(a.data + eps)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * (0.5 / np.maximum(y, 1e-12)))

    return _make(y, (a,), back)


def relu(a):
    a = _ensure(a)
    mask = a.data > 0

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), back)


def sigmoid(a):
    a = _ensure(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * y * (1.0 - y))

    return _make(y, (a,), back)


def log(a):
    a = _ensure(a)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), back)


# ---------------------------------------------------------------------------
# reductions and shaping

def tsum(a, axis=None, keepdims=False):
    a = _ensure(a)

    def back(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(ge, a.shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def tmean(a, axis=None, keepdims=False):
    a = _ensure(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]

    def back(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accumulate(a, np.broadcast_to(g / n, a.shape))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(ge / n, a.shape))

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), back)


def reshape(a, shape):
    a = _ensure(a)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a, axes):
    a = _ensure(a)
    inv = np.argsort(axes)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), back)


def concat(tensors, axis=0):
    tensors = [_ensure(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def matmul(a, b):
    a, b = _ensure(a), _ensure(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), back)


# ---------------------------------------------------------------------------
# neural-net ops

def _correlate_cols(data, kernel_mat, K, pl, pr):
    """Same-padding correlation via im2col GEMM.

    data (B, C, L), kernel_mat (C*K, O). Returns (output (B, O, L), cols).
    """
    B, C, L = data.shape
    xp = np.zeros((B, C, L + pl + pr), dtype=data.dtype)
    xp[:, :, pl:pl + L] = data
    win = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)
    cols = win.transpose(0, 2, 1, 3).reshape(B * L, C * K)  # forces one copy
    out = (cols @ kernel_mat).reshape(B, L, -1).transpose(0, 2, 1)
    return np.ascontiguousarray(out), cols


def conv1d(x, w, b=None):
    """Stride-1, same-padding 1D convolution.

    x: (B, C_in, L), w: (C_out, C_in, K), b: (C_out,). Output (B, C_out, L).
    """
    x, w = _ensure(x), _ensure(w)
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    B, C, L = x.shape
    O, _, K = w.shape
    pl, pr = (K - 1) // 2, K // 2
    y, cols = _correlate_cols(x.data, w.data.reshape(O, C * K).T, K, pl, pr)
    if b is not None:
        b = _ensure(b)
        y += b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gmat = g.transpose(0, 2, 1).reshape(B * L, O)
        if w.requires_grad:
            _accumulate(w, (gmat.T @ cols).reshape(O, C, K))
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            # input gradient is the correlation of g with the kernel
            # transposed over channels and flipped along taps, padding mirrored
            wback = w.data.transpose(1, 0, 2)[:, :, ::-1].reshape(C, O * K).T
            gx, _ = _correlate_cols(g, wback, K, pr, pl)
            _accumulate(x, gx)

    return _make(y, parents, back)


def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.1, eps=1e-5, transductive=False):
    """Batch normalization over (B,) or (B, L) per channel.

    x: (B, C) or (B, C, L). ``running_mean``/``running_var`` are plain
    numpy buffers, updated in place in training mode (biased batch variance
    normalizes; unbiased updates the running estimate). ``transductive``
    makes evaluation normalize with the current batch statistics as well,
    without touching the running buffers; useful when the batch is a whole
    episode and therefore part of the model's input.
    """
    x, gamma, beta = _ensure(x), _ensure(gamma), _ensure(beta)
    if x.data.ndim == 2:
        axes, bshape = (0,), (1, -1)
    elif x.data.ndim == 3:
        axes, bshape = (0, 2), (1, -1, 1)
    else:
        raise ShapeError(f"batchnorm: expected 2D or 3D input, got {x.shape}")
    if x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm: channels {x.shape} vs gamma {gamma.shape}")
    gview = gamma.data.reshape(bshape)
    bview = beta.data.reshape(bshape)

    if training or transductive:
        n = x.data.shape[0] * (x.data.shape[2] if x.data.ndim == 3 else 1)
        mu = x.data.mean(axis=axes)
        centred = x.data - mu.reshape(bshape)
        var = (centred * centred).mean(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centred
        xhat *= inv_std.reshape(bshape)
        if training:
            unbiased = var * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased

        def back(g):
            if gamma.requires_grad:
                _accumulate(gamma, (g * xhat).sum(axis=axes))
            if beta.requires_grad:
                _accumulate(beta, g.sum(axis=axes))
            if x.requires_grad:
                dxhat = g * gview
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                dx = (dxhat - s1 / n - xhat * s2 / n) * inv_std.reshape(bshape)
                _accumulate(x, dx)

        return _make(gview * xhat + bview, (x, gamma, beta), back)

    scale = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean.reshape(bshape)) * scale.reshape(bshape)

    def back(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=axes))
        if x.requires_grad:
            _accumulate(x, g * gview * scale.reshape(bshape))

    return _make(gview * xhat + bview, (x, gamma, beta), back)


def meanpool2(x):
    """Halve the last axis by averaging adjacent pairs (floor; length-1 passes through)."""
    x = _ensure(x)
    L = x.shape[-1]
    if L < 2:
        return x
    half = L // 2
    lead = x.shape[:-1]

    def back(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            paired = gx[..., :2 * half].reshape(lead + (half, 2))
            paired += 0.5 * g[..., None]
            _accumulate(x, gx)

    pooled = x.data[..., :2 * half].reshape(lead + (half, 2)).mean(axis=-1)
    return _make(pooled, (x,), back)


def softmax(a, axis=-1):
    a = _ensure(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(a, y * (g - dot))

    return _make(y, (a,), back)


def cross_entropy_probs(probs, labels):
    """Mean negative log-probability of the true class.

    ``probs`` (M, N) rows are probability distributions; ``labels`` (M,)
    integer class ids. Probabilities are clamped at PROB_CLAMP before the
    log; clamped entries get zero gradient.
    """
    probs = _ensure(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.data.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(
            f"cross_entropy_probs: probs {probs.shape} vs labels {labels.shape}")
    M = probs.shape[0]
    picked = probs.data[np.arange(M), labels]
    clamped = np.maximum(picked, PROB_CLAMP)
    loss = -np.log(clamped).mean()

    def back(g):
        if probs.requires_grad:
            gp = np.zeros_like(probs.data)
            live = picked >= PROB_CLAMP
            gp[np.arange(M), labels] = np.where(live, -1.0 / clamped, 0.0) * (g / M)
            _accumulate(probs, gp)

    return _make(np.asarray(loss, dtype=probs.data.dtype), (probs,), back)


# ---------------------------------------------------------------------------
# backward pass

def backward(loss, leaves=None):
    """Populate gradients of all reachable tensors from a scalar loss.

    Leaves passed in that the loss does not reach get a zero gradient.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
    if leaves is not None:
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


def grad_check(fn, inputs, h=1e-4, max_coords=None, rng=None):
    """Max relative error between autodiff and central finite differences.

    ``fn(inputs) -> scalar Tensor``. Inputs should be float64 tensors with
    ``requires_grad=True``. When ``max_coords`` is set, that many random
    coordinates per input are probed instead of all of them.
    """
    for t in inputs:
        t.zero_grad()
        if t.data.ndim and not t.data.flags["C_CONTIGUOUS"]:
            t.data = np.ascontiguousarray(t.data)  # flat view below must alias
    loss = fn(inputs)
    backward(loss, leaves=inputs)
    grads = [t.grad.copy() for t in inputs]
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for t, g in zip(inputs, grads):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(inputs).item()
            flat[i] = orig - h
            lo = fn(inputs).item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * h)
            ag = g.reshape(-1)[i]
            err = abs(ag - fd) / max(abs(ag), abs(fd), 1e-3)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoint format: magic + version, then (name, shape, float32 payload)

_MAGIC = b"SPROP"
_VERSION = 1


def save_checkpoint(path, arrays):
    """Write named parameter arrays as raw 32-bit floats."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HI", _VERSION, len(arrays)))
        for name, value in arrays.items():
            data = value.data if isinstance(value, Tensor) else np.asarray(value)
            data = np.asarray(data, dtype=np.float32)
            if data.ndim and not data.flags["C_CONTIGUOUS"]:
                data = np.ascontiguousarray(data)
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{max(data.ndim, 1)}q", *(data.shape or (1,))))
            fh.write(data.tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into a dict of float32 numpy arrays."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ContractError(f"not a checkpoint file: {path}")
        version, count = struct.unpack("<HI", fh.read(6))
        if version != _VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{max(ndim, 1)}q", fh.read(8 * max(ndim, 1)))
            if ndim == 0:
                shape = ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * n), dtype=np.float32).copy()
            out[name] = data.reshape(shape)
        return out
