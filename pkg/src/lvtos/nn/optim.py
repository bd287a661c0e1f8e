from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import Tensor


class Adam:
    """Adam with bias correction. Moment buffers are keyed by parameter name."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: Mapping[str, np.ndarray] | None = None) -> None:
        """Apply one update. Uses each parameter's ``.grad`` unless ``grads`` is given."""
        if grads is None:
            grads = {k: p.grad if p.grad is not None else np.zeros_like(p.data)
                     for k, p in self.params.items()}
        if set(grads) != set(self.params):
            raise ValueError("gradient names do not match parameter names")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = np.asarray(grads[k], dtype=np.float64)
            if g.shape != p.shape:
                raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** t)
            vhat = self.v[k] / (1 - b2 ** t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def adam_step(opt: Adam, grads: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    opt.step(grads)
    return opt.params
