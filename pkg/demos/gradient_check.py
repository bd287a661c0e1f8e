"""Finite-difference check of a small conv -> pool -> dense stack.

    python3 demos/gradient_check.py
"""
import numpy as np

from lvtos.nn import (BatchNorm, Conv2d, Dense, Flatten, MaxPool2d, ReLU, Sequential,
                      ShiftedLeakyReLU, mse_grad, mse_loss)
from lvtos.nn.gradcheck import numerical_grad, rel_error

rng = np.random.default_rng(0)
net = Sequential([
    Conv2d(1, 3, 3, padding="same", dilation=2, rng=rng, name="conv"),
    BatchNorm(3, name="bn"),
    ReLU(name="relu"),
    MaxPool2d(3, 2, name="pool"),
    Flatten(name="flat"),
    Dense(3 * 4 * 4, 5, rng=rng, name="dense"),
    ShiftedLeakyReLU(1.0, 0.01, name="out"),
], (1, 8, 8))
x = rng.normal(size=(4, 1, 8, 8))
y = rng.uniform(1, 3, size=(4, 5))


def loss():
    return mse_loss(net.forward(x), y)


net.zero_grad()
net.backward(mse_grad(net.forward(x), y))
# conv.bias feeds batchnorm, which subtracts the batch mean: its true gradient is
# exactly zero, so only the absolute size of the numeric estimate is meaningful there
for name, p in sorted(net.params().items()):
    num = numerical_grad(loss, p.data)
    if max(np.abs(num).max(), np.abs(p.grad).max()) < 1e-12:
        err = "both zero"
    else:
        err = f"{rel_error(p.grad, num):.2e}"
    print(f"{name:12s} {str(p.data.shape):16s} rel err {err:10s} max|grad| {np.abs(num).max():.1e}")
