"""AdamW with decoupled weight decay.

Moment arrays and the step count live in the optimizer keyed by parameter
name, mirroring checkpoint tensor naming. A missing gradient is treated as
zero, so a weight-decay-only step still applies p <- p * (1 - lr * wd).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = {n: p for n, p in params.items() if p.requires_grad}
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def scale_grads(self, factor: float) -> None:
        for p in self.params.values():
            if p.grad is not None:
                p.grad = p.grad * np.float32(factor)

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        b1c = 1.0 - self.beta1 ** t
        b2c = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            mhat = m / b1c
            vhat = v / b2c
            update = mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(np.float32)
