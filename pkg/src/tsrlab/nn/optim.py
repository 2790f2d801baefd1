"""AdamW (decoupled weight decay)."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    """Adam moments with weight decay applied directly to the weights.

    Defaults are the common ones (betas 0.9/0.999, eps 1e-8, decay 0.01);
    they are conventions, not tuned values.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class StepLR:
    """Multiply the learning rate by ``gamma`` every ``step_size`` calls."""

    def __init__(self, opt: AdamW, step_size: int, gamma: float = 0.1):
        self.opt, self.step_size, self.gamma = opt, step_size, gamma
        self.count = 0

    def step(self) -> None:
        self.count += 1
        if self.count % self.step_size == 0:
            self.opt.lr *= self.gamma
