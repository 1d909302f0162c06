"""Small fully-connected network: ELU hidden layers, softmax cross-entropy head.

Parameters live in one flat float64 buffer; ``weights`` and ``biases`` are
views into it, so a snapshot is a single array copy. Weight matrices are
stored input-major, shape ``(fan_in, fan_out)``, and a forward pass is
``x @ W + b``.

The functions here are the plain numpy reference path. The per-sample
training loop used by the learners goes through :mod:`homeonet._kernels`,
which is checked against this module in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from homeonet import _kernels

N_PIXELS = 784
N_CLASSES = 10
DEFAULT_DIMS = (N_PIXELS, 80, 60, N_CLASSES)


class ConfigurationError(ValueError):
    """Raised when network and data dimensions do not line up."""


class NonFiniteError(FloatingPointError):
    """Raised when training produces NaN or Inf."""


def _layout(dims):
    dims = tuple(int(d) for d in dims)
    offsets = []
    pos = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w_off = pos
        pos += fan_in * fan_out
        b_off = pos
        pos += fan_out
        offsets.append((w_off, b_off))
    return dims, offsets, pos


@dataclass(eq=False)
class MLP:
    layer_dims: tuple
    params: np.ndarray
    weights: list = field(init=False, repr=False)
    biases: list = field(init=False, repr=False)

    def __post_init__(self):
        dims, offsets, size = _layout(self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ConfigurationError(f"invalid layer dims {dims}")
        if self.params.shape != (size,):
            raise ConfigurationError(
                f"parameter buffer has shape {self.params.shape}, expected ({size},)")
        self.layer_dims = dims
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        self.weights = []
        self.biases = []
        for (w_off, b_off), fan_in, fan_out in zip(offsets, dims[:-1], dims[1:]):
            self.weights.append(
                self.params[w_off:w_off + fan_in * fan_out].reshape(fan_in, fan_out))
            self.biases.append(self.params[b_off:b_off + fan_out])

    @classmethod
    def zeros(cls, layer_dims=DEFAULT_DIMS) -> "MLP":
        _, _, size = _layout(layer_dims)
        return cls(tuple(layer_dims), np.zeros(size))

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def copy(self) -> "MLP":
        return MLP(self.layer_dims, self.params.copy())

    def __eq__(self, other):
        if not isinstance(other, MLP):
            return NotImplemented
        return (self.layer_dims == other.layer_dims
                and np.array_equal(self.params, other.params))


def he_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a ``(fan_in, fan_out)`` matrix from N(0, 2/fan_in)."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be positive")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def init_mlp(layer_dims=DEFAULT_DIMS, rng: np.random.Generator | None = None) -> MLP:
    """He-initialised weights, zero biases."""
    rng = np.random.default_rng() if rng is None else rng
    net = MLP.zeros(layer_dims)
    for w in net.weights:
        w[...] = he_init(w.shape[0], w.shape[1], rng)
    return net


def snapshot(net: MLP) -> MLP:
    return net.copy()


def restore(net: MLP, saved: MLP) -> None:
    if net.layer_dims != saved.layer_dims:
        raise ConfigurationError("cannot restore across different layer dims")
    net.params[...] = saved.params


def elu(x):
    """ELU with alpha = 1."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    return out if out.ndim else float(out)


def elu_grad(x):
    """Derivative of :func:`elu`; the right derivative (1) is used at 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))
    out = np.where(x == 0, 1.0, out)
    return out if out.ndim else float(out)


def _check_input(net: MLP, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ConfigurationError(
            f"input of shape {x.shape} does not match network input width "
            f"{net.layer_dims[0]}")
    return x


def check_batch(x: np.ndarray, y: np.ndarray, n_classes: int = N_CLASSES) -> None:
    """Validate a batch: equal nonzero length, pixels in [0, 1], labels in range."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.ndim != 2 or y.ndim != 1 or len(x) != len(y) or len(y) == 0:
        raise ValueError(f"bad batch shapes {x.shape} / {y.shape}")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")


def _forward_cache(net: MLP, x: np.ndarray):
    pre, post = [], [x]
    a = x
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else elu(z)
        post.append(a)
    return pre, post


def forward(net: MLP, x: np.ndarray) -> np.ndarray:
    """Logits, shape ``(N, n_classes)``."""
    x = _check_input(net, x)
    _, post = _forward_cache(net, x)
    return post[-1]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = len(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    dlogits = np.exp(shifted - log_norm[:, None])
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return loss, dlogits


@dataclass
class Gradients:
    weights: list
    biases: list

    def flat(self) -> np.ndarray:
        parts = []
        for gw, gb in zip(self.weights, self.biases):
            parts.append(gw.ravel())
            parts.append(gb.ravel())
        return np.concatenate(parts)


def backward(net: MLP, x: np.ndarray, y: np.ndarray):
    """Mean batch loss and its gradient for every weight and bias."""
    x = _check_input(net, x)
    pre, post = _forward_cache(net, x)
    loss, delta = softmax_xent(post[-1], y)
    gw = [None] * net.n_layers
    gb = [None] * net.n_layers
    for i in reversed(range(net.n_layers)):
        gw[i] = post[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * elu_grad(pre[i - 1])
    return loss, Gradients(gw, gb)


def sgd_step(net: MLP, grads: Gradients, lr: float) -> MLP:
    """In-place ``p -= lr * g`` for every parameter. Returns ``net``."""
    for gw, gb in zip(grads.weights, grads.biases):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NonFiniteError("non-finite gradient in SGD step")
    for w, b, gw, gb in zip(net.weights, net.biases, grads.weights, grads.biases):
        if w.shape != gw.shape or b.shape != gb.shape:
            raise ConfigurationError("gradient shapes do not match network")
        w -= lr * gw
        b -= lr * gb
    return net


def evaluate(net: MLP, x: np.ndarray, raw_labels: np.ndarray, perm=None):
    """Accuracy and mean loss against labels relabelled by ``perm``."""
    raw_labels = np.asarray(raw_labels, dtype=np.int64)
    if len(raw_labels) == 0:
        raise ValueError("cannot evaluate on an empty set")
    labels = raw_labels if perm is None else np.asarray(perm)[raw_labels]
    logits = forward(net, x)
    loss, _ = softmax_xent(logits, labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return acc, loss


def numerical_gradient(net: MLP, x, y, indices, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the mean loss at the given flat parameter indices."""
    out = np.empty(len(indices))
    params = net.params
    for k, idx in enumerate(indices):
        orig = params[idx]
        params[idx] = orig + eps
        up, _ = softmax_xent(forward(net, x), y)
        params[idx] = orig - eps
        down, _ = softmax_xent(forward(net, x), y)
        params[idx] = orig
        out[k] = (up - down) / (2 * eps)
    return out


def relative_error(analytic, numeric, floor: float = 1e-7) -> np.ndarray:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def gradcheck(net: MLP, x, y, eps: float = 1e-5, max_coords: int | None = None,
              rng: np.random.Generator | None = None) -> float:
    """Max relative error of :func:`backward` against central differences.

    With ``max_coords`` set, every bias plus a random sample of at most
    ``max_coords`` entries per weight matrix is checked; otherwise all
    parameters are. Denominators are floored at 1e-7 so gradients that are
    numerically zero are compared in absolute terms.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    _, grads = backward(net, x, y)
    analytic = grads.flat()
    if max_coords is None:
        indices = np.arange(net.params.size)
    else:
        _, offsets, _ = _layout(net.layer_dims)
        chosen = []
        for (w_off, b_off), fan_out in zip(offsets, net.layer_dims[1:]):
            n_w = b_off - w_off
            take = min(n_w, max_coords)
            chosen.append(w_off + rng.choice(n_w, size=take, replace=False))
            chosen.append(np.arange(b_off, b_off + fan_out))
        indices = np.concatenate(chosen)
    numeric = numerical_gradient(net, x, y, indices, eps)
    return float(relative_error(analytic[indices], numeric).max())


def _kernel_args(net: MLP):
    scratch = net.__dict__.get("_scratch")
    if scratch is None:
        scratch = net._scratch = _kernels.Scratch(net.layer_dims)
    return tuple(net.weights), tuple(net.biases), scratch


def train_sample(net: MLP, x: np.ndarray, y: int, lr: float, sparse=None) -> float:
    """One compiled SGD step on a single sample; returns the pre-step loss.

    ``sparse`` is an optional precomputed ``(indices, count)`` pair from
    :func:`homeonet._kernels.nonzero_index`.
    """
    nz, nnz = _kernels.nonzero_index(x) if sparse is None else sparse
    ws, bs, sc = _kernel_args(net)
    loss = _kernels.train_sample(ws, bs, x, nz, nnz, int(y), float(lr),
                                 sc.zs, sc.acts, sc.ds)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite training loss ({loss})")
    return loss


def predict_label(net: MLP, x: np.ndarray, sparse=None) -> int:
    nz, nnz = _kernels.nonzero_index(x) if sparse is None else sparse
    ws, bs, sc = _kernel_args(net)
    return int(_kernels.predict_sample(ws, bs, x, nz, nnz, sc.zs, sc.acts))


def train_then_score(net: MLP, images, nz, nnz, labels, order, lr: float,
                     passes: int = 1) -> float:
    """Train ``net`` in place over the listed samples, then return their mean loss."""
    ws, bs, sc = _kernel_args(net)
    return float(_kernels.train_then_score(ws, bs, images, nz, nnz, labels, order,
                                           float(lr), int(passes), sc.zs, sc.acts,
                                           sc.ds))
