"""Layers: convolution, max-pooling, linear, GRU cell, batch normalization.

Array layout is channels-first, (N, C, H, W).  Convolution keeps spatial
dims at stride 1 via zero padding; pooling pads with -inf so partial
windows at the far edges still reduce correctly.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Parameter, Tensor, _node, matmul, sigmoid, tanh, add, mul, sub


class Module:
    """Tiny parameter container: registration order is checkpoint order."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def set_buffer(self, name: str, array: np.ndarray) -> None:
        if name not in self._buffers:
            raise KeyError(name)
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_state(self, prefix: str = ""):
        """Parameters plus buffers, in declaration order (for checkpoints)."""
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p.data, None)
        for name, b in self._buffers.items():
            yield (f"{prefix}{name}", b, (self, name))
        for name, mod in self._modules.items():
            yield from mod.named_state(prefix=f"{prefix}{name}.")


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


# convolution


def _conv_cols(xp: np.ndarray, kh: int, kw: int, oh: int, ow: int, stride: int) -> np.ndarray:
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    win = as_strided(
        xp,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)


def conv2d(x: Tensor, weight: Parameter, bias: Parameter | None, stride: int = 1) -> Tensor:
    """Cross-correlation with zero 'same' padding (odd kernels only)."""
    if x.data.ndim != 4:
        raise ValueError("conv2d expects (N, C, H, W) input")
    f, c, kh, kw = weight.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d supports odd kernel sizes only")
    if x.data.shape[1] != c:
        raise ValueError(f"conv2d channel mismatch: input {x.data.shape[1]}, weight {c}")
    n, _, h, w = x.data.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (w + 2 * pw - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _conv_cols(xp, kh, kw, oh, ow, stride)
    wmat = weight.data.reshape(f, -1)
    y = cols @ wmat.T
    if bias is not None:
        y = y + bias.data
    out = y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)

    def vjp(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        gw = (gmat.T @ cols).reshape(weight.data.shape)
        gb = gmat.sum(axis=0) if bias is not None else None
        gx = None
        if x._needs():
            gcols = (gmat @ wmat).reshape(n, oh, ow, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph:ph + h, pw:pw + w]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _node(out, parents, vjp)


class Conv2d(Module):
    def __init__(self, in_channels: int, filters: int, kernel: int, stride: int,
                 rng: np.random.Generator):
        super().__init__()
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(glorot_uniform(rng, (filters, in_channels, kernel, kernel),
                                               fan_in, filters * kernel * kernel))
        self.bias = Parameter(np.zeros(filters))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride)


# pooling


def maxpool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Per-window max; backward routes to the first (lowest-index) argmax."""
    if x.data.ndim != 4:
        raise ValueError("maxpool2d expects (N, C, H, W) input")
    s = stride or kernel
    n, c, h, w = x.data.shape
    if kernel > h or kernel > w:
        raise ValueError(f"pool kernel {kernel} exceeds spatial dims {h}x{w}")
    oh = -(-(h - kernel) // s) + 1
    ow = -(-(w - kernel) // s) + 1
    ph = (oh - 1) * s + kernel - h
    pw = (ow - 1) * s + kernel - w
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    sn, sc, sh, sw = xp.strides
    win = as_strided(
        xp,
        shape=(n, c, oh, ow, kernel, kernel),
        strides=(sn, sc, sh * s, sw * s, sh, sw),
        writeable=False,
    ).reshape(n, c, oh, ow, kernel * kernel)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gp = np.zeros_like(xp)
        ii, jj = np.divmod(arg, kernel)
        nn, cc, aa, bb = np.indices(arg.shape, sparse=False)
        np.add.at(gp, (nn, cc, aa * s + ii, bb * s + jj), g)
        return (gp[:, :, :h, :w],)

    return _node(out, (x,), vjp)


# linear


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim))
        self.bias = Parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)


# batch normalization


def batch_norm(
    x: Tensor,
    gamma: Parameter,
    beta: Parameter,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.9,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalize per feature; returns (out, new_running_mean, new_running_var).

    Training mode uses batch statistics (batch size must be >= 2) and
    advances the running EMA; inference mode reads the running stats.
    """
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    if x.data.ndim == 4:
        bshape = (1, -1, 1, 1)
    else:
        bshape = (1, -1)
    if training:
        m = int(np.prod([x.data.shape[a] for a in axes]))
        if m < 2:
            raise ValueError("batch_norm in training mode needs batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        new_mean = momentum * running_mean + (1.0 - momentum) * mu
        new_var = momentum * running_var + (1.0 - momentum) * var
    else:
        mu, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
        m = 0
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def vjp(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        gx = None
        if x._needs():
            dxhat = g * gamma.data.reshape(bshape)
            if training:
                s1 = dxhat.sum(axis=axes).reshape(bshape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = (inv.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv.reshape(bshape)
        return (gx, dgamma, dbeta)

    return _node(out, (x, gamma, beta), vjp), new_mean, new_var


class BatchNorm(Module):
    def __init__(self, n_features: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.gamma = Parameter(np.ones(n_features))
        self.beta = Parameter(np.zeros(n_features))
        self.register_buffer("running_mean", np.zeros(n_features))
        self.register_buffer("running_var", np.ones(n_features))
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        out, new_mean, new_var = batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training, self.eps, self.momentum,
        )
        if training:
            self.set_buffer("running_mean", new_mean)
            self.set_buffer("running_var", new_var)
        return out


# GRU


class GRUCell(Module):
    """Gated recurrent cell: update/reset gates plus a tanh candidate."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        def w(shape):
            return Parameter(glorot_uniform(rng, shape, shape[0], shape[1]))
        self.w_update = w((in_dim, hidden))
        self.u_update = w((hidden, hidden))
        self.b_update = Parameter(np.zeros(hidden))
        self.w_reset = w((in_dim, hidden))
        self.u_reset = w((hidden, hidden))
        self.b_reset = Parameter(np.zeros(hidden))
        self.w_cand = w((in_dim, hidden))
        self.u_cand = w((hidden, hidden))
        self.b_cand = Parameter(np.zeros(hidden))
        self.hidden = hidden

    def project_inputs(self, x: Tensor) -> dict[str, Tensor]:
        """Input-to-hidden projections (with biases) for a whole batch of
        steps at once; step_projected consumes per-step row blocks of these."""
        return {
            "update": add(matmul(x, self.w_update), self.b_update),
            "reset": add(matmul(x, self.w_reset), self.b_reset),
            "cand": add(matmul(x, self.w_cand), self.b_cand),
        }

    def step_projected(self, proj: dict[str, Tensor], h: Tensor) -> Tensor:
        z = sigmoid(add(proj["update"], matmul(h, self.u_update)))
        r = sigmoid(add(proj["reset"], matmul(h, self.u_reset)))
        cand = tanh(add(proj["cand"], matmul(mul(r, h), self.u_cand)))
        return add(mul(sub(1.0, z), h), mul(z, cand))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        return self.step_projected(self.project_inputs(x), h)
