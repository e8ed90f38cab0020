from __future__ import annotations

from typing import Sequence

import numpy as np

from .layers import Parameter


class NonFiniteGradientError(FloatingPointError):
    pass


def adam_step(params: Sequence[Parameter], lr: float = 2e-4, beta1: float = 0.5,
              beta2: float = 0.99, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; zeroes the gradients afterwards.

    All gradients are checked before anything is touched, so a non-finite
    gradient leaves every parameter and moment unchanged.
    """
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {p.name or i} has no gradient")
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name or i}")
    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1 - beta2) * g * g
        m_hat = p.adam_m / (1 - beta1 ** t)
        v_hat = p.adam_v / (1 - beta2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)
        p.grad = np.zeros_like(p.data)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr=2e-4, beta1=0.5, beta2=0.99, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)
