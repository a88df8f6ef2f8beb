"""RMSprop with momentum and inverse-time learning-rate decay, plus clipping.

Per parameter and step t (t counts completed steps, starting at 0):

    lr_t   = lr / (1 + decay * t)
    cache  = rho * cache + (1 - rho) * g^2
    buf    = momentum * buf - lr_t * g / (sqrt(cache) + eps)
    theta += buf

Frozen parameters are skipped entirely; every step ends by clearing all
gradient buffers.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Parameter


def clip_gradients(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def rmsprop_step(
    params: list[Parameter],
    lr: float,
    decay: float = 0.0,
    momentum: float = 0.0,
    rho: float = 0.9,
    eps: float = 1e-8,
    t: int = 0,
) -> None:
    """One update over params; clears every gradient buffer afterwards."""
    lr_t = lr / (1.0 + decay * t)
    for p in params:
        g = p.grad
        if g is None or p.frozen:
            continue
        p.cache *= rho
        p.cache += (1.0 - rho) * g * g
        p.momentum *= momentum
        p.momentum -= lr_t * g / (np.sqrt(p.cache) + eps)
        p.data += p.momentum
    for p in params:
        p.grad = None


class RMSProp:
    def __init__(
        self,
        params: list[Parameter],
        lr: float,
        decay: float = 0.0,
        momentum: float = 0.0,
        rho: float = 0.9,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.decay = decay
        self.momentum = momentum
        self.rho = rho
        self.eps = eps
        self.t = 0

    def step(self) -> None:
        rmsprop_step(
            self.params, self.lr, self.decay, self.momentum, self.rho, self.eps, self.t
        )
        self.t += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
