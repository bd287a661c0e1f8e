from __future__ import annotations

from typing import Iterable

import numpy as np

from .layers import Layer, ShapeError
from .tensor import Tensor


class Sequential:
    """A chain of layers with a declared per-sample input shape."""

    def __init__(self, layers: Iterable[Layer], input_shape: tuple[int, ...]):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self._ran_forward = False
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"layer names must be unique: {names}")
        self.output_shape = self._infer(self.input_shape)

    def _infer(self, shape):
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.name}, {layer.kind}): {exc}") from None
        return tuple(shape)

    def forward(self, x, train: bool = True) -> np.ndarray:
        x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"layer 0 ({self.layers[0].name if self.layers else '-'}): input shape "
                f"{x.shape[1:]} does not match declared {self.input_shape}")
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train=train)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.name}, {layer.kind}): {exc}") from None
        self._ran_forward = True
        return x

    __call__ = forward

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Backpropagate ``dL/doutput``; accumulates parameter grads and returns ``dL/dinput``."""
        if not self._ran_forward:
            raise RuntimeError("backward called before forward")
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self) -> dict[str, Tensor]:
        return {f"{layer.name}.{k}": v for layer in self.layers for k, v in layer.params().items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{layer.name}.{k}": v for layer in self.layers for k, v in layer.buffers().items()}

    def zero_grad(self) -> None:
        for p in self.params().values():
            p.zero_grad()


def state_dict(model) -> dict[str, np.ndarray]:
    """Parameters and buffers of ``model`` as plain arrays, in a stable order."""
    out = {k: v.data.copy() for k, v in model.params().items()}
    out.update({k: v.copy() for k, v in model.buffers().items()})
    return out


def load_state_dict(model, state: dict[str, np.ndarray]) -> None:
    params, buffers = model.params(), model.buffers()
    missing = (set(params) | set(buffers)) - set(state)
    if missing:
        raise KeyError(f"checkpoint missing entries: {sorted(missing)}")
    for k, p in params.items():
        if state[k].shape != p.shape:
            raise ShapeError(f"{k}: checkpoint shape {state[k].shape} != {p.shape}")
        p.data[...] = state[k]
    for k, b in buffers.items():
        b[...] = state[k]
