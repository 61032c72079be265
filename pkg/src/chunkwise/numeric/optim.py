"""Adaptive moment optimizer with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    """Decoupled-weight-decay Adam over named parameter tensors.

    Only parameters carrying a gradient are touched by :meth:`step`, so
    frozen tensors (``requires_grad=False``, never assigned a gradient)
    stay bit-identical through training. The per-step learning rate is
    supplied by the caller, which keeps scheduling external.
    """

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = dict(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()
                   if p.requires_grad}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()
                   if p.requires_grad}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
