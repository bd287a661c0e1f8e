from __future__ import annotations

import numpy as np


class Tensor:
    """A float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None):
        self.data = np.array(data, dtype=np.float64, order="C")
        if grad is not None:
            grad = np.array(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ValueError(f"grad shape {grad.shape} != data shape {self.data.shape}")
        self.grad = grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape})"
