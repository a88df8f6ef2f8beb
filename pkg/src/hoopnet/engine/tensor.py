"""Tape-based reverse-mode autodiff over dense float64 numpy arrays.

Graph nodes are Tensors; each op attaches a vector-Jacobian closure.
Gradients accumulate out-of-place (``p.grad = p.grad + g``) so a returned
gradient may alias an upstream buffer without risk.  Leaf gradients
persist across backward() calls until the optimizer clears them, which is
what lets a training step sum losses over micro-batches in a fixed order.

NaN policy: backward() refuses non-finite losses, and set_debug_finite(True)
makes every op validate its output (used by the test suite; off by default
for speed).  The training loop checks each batch loss, and model stepping
checks its head outputs, so divergence surfaces immediately either way.
"""

from __future__ import annotations

import threading

import numpy as np

_STATE = threading.local()  # per-thread so concurrent inference never races
_DEBUG_FINITE = False


def _grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


def set_debug_finite(flag: bool) -> None:
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(flag)


class no_grad:
    """Context manager: ops inside build no tape (inference mode)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    def _needs(self) -> bool:
        return self.requires_grad

    # convenience mirrors of the free functions

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable leaf with persistent optimizer state and a freeze flag."""

    __slots__ = ("cache", "momentum", "frozen", "name")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.cache = np.zeros_like(self.data)
        self.momentum = np.zeros_like(self.data)
        self.frozen = False
        self.name = name

    def _needs(self) -> bool:
        return not self.frozen


def _node(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    if _DEBUG_FINITE and not np.isfinite(data).all():
        raise FloatingPointError("non-finite values in forward pass")
    out = Tensor(data)
    if _grad_enabled() and any(p._needs() for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad."""
    if loss.data.size != 1:
        raise ValueError("backward() expects a scalar loss")
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None:
            continue
        grads = node._vjp(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p._needs():
                continue
            p.grad = g if p.grad is None else p.grad + g
        node.grad = None  # free intermediate gradients as we go


# elementwise / shape ops


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), vjp)


def hadamard(a, b) -> Tensor:
    """Elementwise product of same-shape tensors."""
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"hadamard shape mismatch {a.data.shape} vs {b.data.shape}")
    return mul(a, b)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.data.shape} @ {b.data.shape}")

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def vjp(g):
        return (g * mask,)

    return _node(x.data * mask, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _node(out, (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _node(out, (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _node(x.data.reshape(shape), (x,), vjp)


def row_block(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice x[start:stop]; backward scatters into zeros."""
    shape = x.data.shape

    def vjp(g):
        gx = np.zeros(shape)
        gx[start:stop] = g
        return (gx,)

    return _node(x.data[start:stop], (x,), vjp)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def tsum(x: Tensor) -> Tensor:
    shape = x.data.shape

    def vjp(g):
        return (np.broadcast_to(g, shape),)

    return _node(np.asarray(x.data.sum()), (x,), vjp)


def tmean(x: Tensor) -> Tensor:
    shape = x.data.shape
    n = x.data.size

    def vjp(g):
        return (np.broadcast_to(g / n, shape),)

    return _node(np.asarray(x.data.mean()), (x,), vjp)


# softmax family (always along the last axis)


def _softmax_data(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    p = _softmax_data(x.data)

    def vjp(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _node(p, (x,), vjp)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def vjp(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(out, (x,), vjp)


def _target_indices(targets, n_classes: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim >= 2 and t.shape[-1] == n_classes and not np.issubdtype(t.dtype, np.integer):
        return t.argmax(axis=-1)
    if t.ndim >= 2 and t.shape[-1] == n_classes:
        # integer one-hot rows
        return t.argmax(axis=-1)
    return t.astype(np.int64)


def softmax_nll(logits: Tensor, targets) -> Tensor:
    """Per-row negative log likelihood ``-log softmax(logits)[target]``.

    ``targets`` may be class indices of shape (N,) or one-hot rows (N, K).
    Returns a length-N tensor; reduce with .sum() or .mean().
    """
    x = logits.data
    if x.ndim != 2:
        raise ValueError("softmax_nll expects (N, K) logits")
    n, k = x.shape
    idx = _target_indices(targets, k)
    if idx.shape != (n,):
        raise ValueError(f"targets shape {idx.shape} does not match logits rows {n}")
    if (idx < 0).any() or (idx >= k).any():
        raise ValueError("target index out of range")
    m = x.max(axis=-1)
    lse = np.log(np.exp(x - m[:, None]).sum(axis=-1)) + m
    losses = lse - x[np.arange(n), idx]

    def vjp(g):
        p = _softmax_data(x)
        gi = p * g[:, None]
        gi[np.arange(n), idx] -= g
        return (gi,)

    return _node(losses, (logits,), vjp)


def gaussian_noise(x: Tensor, sigma: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Additive i.i.d. noise in training mode; identity otherwise.

    The gradient passes through unchanged in both modes.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not training or sigma == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode noise needs an RNG")
    noise = rng.normal(0.0, sigma, x.data.shape)

    def vjp(g):
        return (g,)

    return _node(x.data + noise, (x,), vjp)
