from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..autograd import Tensor


class Adam:
    """Adam over a named parameter dict; moments are kept per parameter name."""

    def __init__(self, params: "OrderedDict[str, Tensor]", lr: float = 2e-4,
                 betas: tuple[float, float] = (0.5, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = OrderedDict((k, np.zeros_like(p.data)) for k, p in params.items())
        self.v = OrderedDict((k, np.zeros_like(p.data)) for k, p in params.items())

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
