"""A small tape-based reverse-mode autodiff core over float64 numpy arrays.

Provides :class:`Tensor`, dense layers and MLPs, an LSTM cell pair, optional
batch normalization, the Adam optimizer, finite-difference gradient checks
and JSON checkpoints.
"""

from __future__ import annotations

import base64
import json
import math
from typing import Callable, Iterable, Sequence

import numpy as np

LEAKY_SLOPE = 0.01
FORMAT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or infinity."""


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    """An n-d float64 array that records how it was computed.

    Parameters
    ----------
    data : array_like
    requires_grad : bool
        Leaf tensors with this flag accumulate ``.grad`` on :meth:`backward`.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _check=True):
        self.data = np.asarray(data, dtype=np.float64)
        if _check and not np.all(np.isfinite(self.data)):
            raise NonFiniteError("non-finite value produced")
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    # -- graph ------------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor(self.data + other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor(x * y, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor(x / y, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g / y, x.shape),
                                           _unbroadcast(-g * x / (y * y), y.shape)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("only scalar exponents are supported")
        x = self.data
        return Tensor(x**p, _parents=(self,), _backward=lambda g: (g * p * x ** (p - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("matmul supports 2-d operands only")
        if x.shape[1] != y.shape[0]:
            raise ValueError(f"matmul shape mismatch {x.shape} @ {y.shape}")
        return Tensor(x @ y, _parents=(self, other), _backward=lambda g: (g @ y.T, x.T @ g))

    def __getitem__(self, idx):
        x = self.data
        out = x[idx]

        def back(g):
            full = np.zeros_like(x)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor(out, _parents=(self,), _backward=back)

    @property
    def T(self):
        return Tensor(self.data.T, _parents=(self,), _backward=lambda g: (g.T,))

    def reshape(self, *shape):
        old = self.shape
        return Tensor(self.data.reshape(*shape), _parents=(self,), _backward=lambda g: (g.reshape(old),))

    def sum(self, axis=None, keepdims=False):
        x = self.data

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

        return Tensor(x.sum(axis=axis, keepdims=keepdims), _parents=(self,), _backward=back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis, keepdims) * (1.0 / n)

    # -- elementwise functions -----------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return Tensor(out, _parents=(self,), _backward=lambda g: (g * out,))

    def log(self):
        x = self.data
        if np.any(x <= 0):
            raise NonFiniteError("log of a non-positive value")
        return Tensor(np.log(x), _parents=(self,), _backward=lambda g: (g / x,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor(out, _parents=(self,), _backward=lambda g: (g * (1.0 - out * out),))

    def sigmoid(self):
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return Tensor(out, _parents=(self,), _backward=lambda g: (g * out * (1.0 - out),))

    def leaky_relu(self, slope=LEAKY_SLOPE):
        x = self.data
        d = np.where(x > 0, 1.0, slope)
        return Tensor(x * d, _parents=(self,), _backward=lambda g: (g * d,))

    def sin(self):
        x = self.data
        return Tensor(np.sin(x), _parents=(self,), _backward=lambda g: (g * np.cos(x),))

    def cos(self):
        x = self.data
        return Tensor(np.cos(x), _parents=(self,), _backward=lambda g: (-g * np.sin(x),))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors: Sequence[Tensor], axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  _parents=tuple(tensors), _backward=back)


def stack(tensors: Sequence[Tensor], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor(np.stack([t.data for t in tensors], axis=axis), _parents=tuple(tensors), _backward=back)


def logsumexp(x: Tensor, axis=-1, keepdims=False) -> Tensor:
    d = x.data
    m = np.max(d, axis=axis, keepdims=True)
    s = np.exp(d - m)
    tot = s.sum(axis=axis, keepdims=True)
    out = m + np.log(tot)
    soft = s / tot

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    res = out if keepdims else np.squeeze(out, axis=axis)
    return Tensor(res, _parents=(x,), _backward=back)


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    return x - logsumexp(x, axis=axis, keepdims=True)


def softmax(x: Tensor, axis=-1) -> Tensor:
    return log_softmax(x, axis).exp()


def mse(pred: Tensor, target) -> Tensor:
    diff = pred - as_tensor(target)
    return (diff * diff).mean()


# ---------------------------------------------------------------------------
# layers

ACTIVATIONS = ("leaky_relu", "sigmoid", "tanh", "identity")


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "leaky_relu":
        return x.leaky_relu()
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "tanh":
        return x.tanh()
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


class Module:
    """Anything holding named parameter tensors."""

    training = False

    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, v in enumerate(val):
                    if isinstance(v, Module):
                        yield from v.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def buffers(self, prefix=""):
        """Non-trainable arrays that still belong in a checkpoint."""
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.buffers(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, v in enumerate(val):
                    if isinstance(v, Module):
                        yield from v.buffers(f"{prefix}{name}.{i}.")

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self.training = mode
        for val in vars(self).values():
            if isinstance(val, Module):
                val.train(mode)
            elif isinstance(val, (list, tuple)):
                for v in val:
                    if isinstance(v, Module):
                        v.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_arrays(self) -> dict:
        out = {k: p.data for k, p in self.named_parameters()}
        out.update({k: v for k, v in self.buffers()})
        return out

    def load_state_arrays(self, arrays: dict):
        params = dict(self.named_parameters())
        bufs = dict(self.buffers())
        for k, v in arrays.items():
            if k in params:
                if params[k].data.shape != v.shape:
                    raise ValueError(f"shape mismatch for {k}: {params[k].data.shape} vs {v.shape}")
                params[k].data = np.array(v, dtype=np.float64)
            elif k in bufs:
                self._set_buffer(k, v)
            else:
                raise KeyError(f"unexpected array {k!r} in checkpoint")
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")

    def _set_buffer(self, key, value):
        head, _, rest = key.partition(".")
        obj = getattr(self, head)
        if isinstance(obj, (list, tuple)):
            idx, _, rest = rest.partition(".")
            obj = obj[int(idx)]
        if isinstance(obj, Module) and rest:
            obj._set_buffer(rest, value)
        else:
            setattr(self, head, np.array(value, dtype=np.float64))


class Dense(Module):
    def __init__(self, n_in, n_out, activation="identity", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng()
        self.weight = Tensor(glorot(rng, n_in, n_out), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        self.activation = activation

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"expected input of width {self.n_in}, got shape {x.shape}")
        return activate(x @ self.weight.T + self.bias, self.activation)


class BatchNorm(Module):
    """Batch normalization over the batch axis; running stats with momentum 0.9."""

    def __init__(self, width, momentum=0.9, eps=1e-5):
        self.gamma = Tensor(np.ones(width), requires_grad=True)
        self.beta = Tensor(np.zeros(width), requires_grad=True)
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps

    def buffers(self, prefix=""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def __call__(self, x: Tensor) -> Tensor:
        if self.training and x.shape[0] > 1:
            mu = x.mean(axis=0, keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=0, keepdims=True)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mu.data[0]
            self.running_var = m * self.running_var + (1 - m) * var.data[0]
            xn = xc / (var + self.eps) ** 0.5
        else:
            xn = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return xn * self.gamma + self.beta


class MLP(Module):
    """Fully connected stack given a width list ``[n_in, h1, ..., n_out]``.

    Hidden layers use leaky ReLU; the last layer uses ``out_activation``.
    """

    def __init__(self, sizes: Sequence[int], out_activation="identity", rng=None,
                 batch_norm=False, hidden_activation="leaky_relu"):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        rng = rng if rng is not None else np.random.default_rng()
        self.sizes = [int(s) for s in sizes]
        n = len(sizes) - 1
        self.layers = [
            Dense(sizes[i], sizes[i + 1], out_activation if i == n - 1 else "identity", rng)
            for i in range(n)
        ]
        self.hidden_activation = hidden_activation
        self.norms = [BatchNorm(sizes[i + 1]) for i in range(n - 1)] if batch_norm else []

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        if h.ndim != 2 or h.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input of width {self.sizes[0]}, got shape {h.shape}")
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < last:
                if self.norms:
                    h = self.norms[i](h)
                h = activate(h, self.hidden_activation)
        return h


def mlp_forward(layers: Sequence[Dense], x) -> Tensor:
    """Apply a plain sequence of dense layers."""
    h = as_tensor(x)
    for layer in layers:
        h = layer(h)
    return h


class LSTMCell(Module):
    """Standard LSTM cell with input, forget and output gates."""

    def __init__(self, n_in, hidden, rng=None):
        rng = rng if rng is not None else np.random.default_rng()
        self.hidden = hidden
        self.w_x = Tensor(np.ascontiguousarray(glorot(rng, n_in, 4 * hidden).T), requires_grad=True)
        self.w_h = Tensor(np.ascontiguousarray(glorot(rng, hidden, 4 * hidden).T), requires_grad=True)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        self.bias = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor):
        z = x @ self.w_x + h @ self.w_h + self.bias
        H = self.hidden
        i = z[:, :H].sigmoid()
        f = z[:, H:2 * H].sigmoid()
        o = z[:, 2 * H:3 * H].sigmoid()
        g = z[:, 3 * H:].tanh()
        c = f * c + i * g
        h = o * c.tanh()
        return h, c


class BiLSTM(Module):
    """Forward and backward LSTM passes over a list of step inputs.

    Returns the per-step concatenation ``[h_fwd_t, h_bwd_t]``.
    """

    def __init__(self, n_in, hidden, rng=None):
        rng = rng if rng is not None else np.random.default_rng()
        self.fwd = LSTMCell(n_in, hidden, rng)
        self.bwd = LSTMCell(n_in, hidden, rng)
        self.hidden = hidden

    def __call__(self, steps: Sequence[Tensor], reverse_cells=False):
        B = steps[0].shape[0]
        zero = Tensor(np.zeros((B, self.hidden)))
        first, second = (self.bwd, self.fwd) if reverse_cells else (self.fwd, self.bwd)
        hf, cf = zero, zero
        outs_f = []
        for x in steps:
            hf, cf = first(x, hf, cf)
            outs_f.append(hf)
        hb, cb = zero, zero
        outs_b = [None] * len(steps)
        for t in range(len(steps) - 1, -1, -1):
            hb, cb = second(steps[t], hb, cb)
            outs_b[t] = hb
        return [concat([a, b], axis=1) for a, b in zip(outs_f, outs_b)]


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Bias-corrected Adam."""

    def __init__(self, params: Iterable[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads=None):
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter is required")
        grads = [np.asarray(g, dtype=np.float64) for g in grads]
        for p, g in zip(self.params, grads):
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(state: Adam, params=None, grads=None):
    """Functional alias for :meth:`Adam.step`."""
    if params is not None and [id(p) for p in params] != [id(p) for p in state.params]:
        raise ValueError("parameters do not match the optimizer state")
    state.step(grads)
    return state.params


def gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h=1e-5,
                   max_entries=10_000, rng=None, atol=1e-6, floor=1e-3) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``loss_fn`` must rebuild the loss from the current parameter values. Above
    ``max_entries`` total entries a random subsample is checked. The relative
    error of entry i is ``|a - n| / max(|a|, |n|, atol, floor * max_j |a_j|)``;
    the last term keeps near-zero entries, whose central differences are
    dominated by round-off, from being judged on their own scale.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    entries = [(k, i) for k, p in enumerate(params) for i in range(p.data.size)]
    if len(entries) > max_entries:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(entries), max_entries, replace=False)
        entries = [entries[j] for j in sorted(pick)]
    worst = 0.0
    scale = max((float(np.max(np.abs(g))) for g in analytic if g.size), default=0.0)
    atol = max(atol, floor * scale)
    for k, i in entries:
        flat = params[k].data.flat
        old = flat[i]
        flat[i] = old + h
        fp = loss_fn().item()
        flat[i] = old - h
        fm = loss_fn().item()
        flat[i] = old
        num = (fp - fm) / (2 * h)
        a = analytic[k].reshape(-1)[i]
        err = abs(a - num) / max(abs(a), abs(num), atol)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def save_checkpoint(path, module: Module, manifest: dict, rng_seed=None, metadata=None):
    doc = {
        "format_version": FORMAT_VERSION,
        "architecture": manifest,
        "parameters": {k: encode_array(v) for k, v in module.state_arrays().items()},
        "rng_seed": rng_seed,
        "training": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_checkpoint(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    doc["parameters"] = {k: decode_array(v) for k, v in doc["parameters"].items()}
    return doc
