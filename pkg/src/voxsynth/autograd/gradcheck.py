from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, float64_mode


def grad_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-4) -> float:
    """Compare backward() against central finite differences on every input coordinate.

    ``f`` receives one 64-bit ``Tensor`` per entry of ``inputs`` and must return
    a scalar tensor. Returns the maximum over all coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    arrays = [np.array(a, dtype=np.float64, copy=True) for a in inputs]
    with float64_mode():
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        out = f(*leaves)
        if out.size != 1:
            raise ValueError("grad_check needs a scalar-valued function")
        out.backward()
        analytic = [np.zeros_like(a) if t.grad is None else t.grad for a, t in zip(arrays, leaves)]

        def evaluate() -> float:
            return float(f(*[Tensor(a) for a in arrays]).data)

        worst = 0.0
        for arr, ana in zip(arrays, analytic):
            flat = arr.reshape(-1)
            ana_flat = ana.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = evaluate()
                flat[i] = orig - eps
                down = evaluate()
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                a = float(ana_flat[i])
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                worst = max(worst, err)
    return worst
