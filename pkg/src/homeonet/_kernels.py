"""Compiled per-sample SGD for the learners' hot loops.

Each training step is batch size 1, so numpy call overhead dominates if the
step is written with array ops. These kernels run the whole forward/backward/
update for one sample in a single compiled function, skip zero pixels in the
input layer, and fuse each hidden layer's backward reduction with its weight
update.

Weights and biases arrive as tuples of per-layer arrays (views into the
network's flat buffer). Fast-math is restricted to reassociation and
contraction: NaN/Inf must still propagate so the caller can detect
divergence.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_FLAGS = {"reassoc", "contract", "nsz", "arcp"}
_JIT = dict(cache=True, fastmath=_FLAGS, error_model="numpy", nogil=True)


@njit(**_JIT)
def _forward_one(Ws, bs, x, nz, nnz, zs, acts):
    n_layers = len(Ws)
    for layer in range(n_layers):
        W = Ws[layer]
        z = zs[layer]
        n_out = W.shape[1]
        z[:] = bs[layer]
        if layer == 0:
            for k in range(nnz):
                i = nz[k]
                v = x[i]
                for j in range(n_out):
                    z[j] += v * W[i, j]
        else:
            prev = acts[layer - 1]
            for i in range(W.shape[0]):
                v = prev[i]
                for j in range(n_out):
                    z[j] += v * W[i, j]
        if layer < n_layers - 1:
            act = acts[layer]
            for j in range(n_out):
                v = z[j]
                act[j] = v if v > 0.0 else np.exp(v) - 1.0


@njit(**_JIT)
def _xent(logits, y):
    m = logits[0]
    for j in range(logits.shape[0]):
        if logits[j] > m:
            m = logits[j]
    s = 0.0
    for j in range(logits.shape[0]):
        s += np.exp(logits[j] - m)
    return np.log(s) - (logits[y] - m), m, s


@njit(**_JIT)
def _train_one(Ws, bs, x, nz, nnz, y, lr, zs, acts, ds):
    n_layers = len(Ws)
    _forward_one(Ws, bs, x, nz, nnz, zs, acts)
    logits = zs[n_layers - 1]
    loss, m, s = _xent(logits, y)
    d = ds[n_layers - 1]
    inv = 1.0 / s
    for j in range(logits.shape[0]):
        d[j] = np.exp(logits[j] - m) * inv
    d[y] -= 1.0
    for layer in range(n_layers - 1, -1, -1):
        W = Ws[layer]
        d = ds[layer]
        n_out = W.shape[1]
        if layer > 0:
            prev = acts[layer - 1]
            zp = zs[layer - 1]
            dp = ds[layer - 1]
            for i in range(W.shape[0]):
                c = lr * prev[i]
                acc = 0.0
                for j in range(n_out):
                    dj = d[j]
                    acc += W[i, j] * dj
                    W[i, j] -= c * dj
                dp[i] = acc if zp[i] > 0.0 else acc * (prev[i] + 1.0)
        else:
            for k in range(nnz):
                i = nz[k]
                c = lr * x[i]
                for j in range(n_out):
                    W[i, j] -= c * d[j]
        b = bs[layer]
        for j in range(n_out):
            b[j] -= lr * d[j]
    return loss


@njit(**_JIT)
def train_sample(Ws, bs, x, nz, nnz, y, lr, zs, acts, ds):
    """One SGD step on one sample, in place. Returns the pre-step loss."""
    return _train_one(Ws, bs, x, nz, nnz, y, lr, zs, acts, ds)


@njit(**_JIT)
def predict_sample(Ws, bs, x, nz, nnz, zs, acts):
    _forward_one(Ws, bs, x, nz, nnz, zs, acts)
    logits = zs[len(Ws) - 1]
    best = 0
    for j in range(1, logits.shape[0]):
        if logits[j] > logits[best]:
            best = j
    return best


@njit(**_JIT)
def store_loss(Ws, bs, X, NZ, NNZ, Y, order, zs, acts):
    """Mean cross-entropy over the stored samples listed in ``order``."""
    total = 0.0
    last = len(Ws) - 1
    for t in range(order.shape[0]):
        k = order[t]
        _forward_one(Ws, bs, X[k], NZ[k], NNZ[k], zs, acts)
        loss, _, _ = _xent(zs[last], Y[k])
        total += loss
    return total / order.shape[0]


@njit(**_JIT)
def train_then_score(Ws, bs, X, NZ, NNZ, Y, order, lr, passes, zs, acts, ds):
    """Train in place for ``passes`` sweeps over the store, then score it there."""
    for _ in range(passes):
        for t in range(order.shape[0]):
            k = order[t]
            _train_one(Ws, bs, X[k], NZ[k], NNZ[k], Y[k], lr, zs, acts, ds)
    return store_loss(Ws, bs, X, NZ, NNZ, Y, order, zs, acts)


class Scratch:
    """Per-layer work buffers for one network shape."""

    def __init__(self, layer_dims):
        widths = layer_dims[1:]
        self.zs = tuple(np.empty(n) for n in widths)
        self.acts = tuple(np.empty(n) for n in widths)
        self.ds = tuple(np.empty(n) for n in widths)


def nonzero_index(x: np.ndarray):
    """Indices of nonzero pixels, padded to the input width, and their count."""
    nz = np.flatnonzero(x)
    idx = np.zeros(x.shape[0], dtype=np.int64)
    idx[:nz.size] = nz
    return idx, nz.size
