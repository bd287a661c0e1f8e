"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable

import numpy as np


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x``, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``, 0 when both vanish."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def check_layer(layer, x: np.ndarray, rng: np.random.Generator, h: float = 1e-5,
                train: bool = True) -> dict[str, float]:
    """Relative errors of analytic vs numerical grads for input and every parameter.

    Uses the scalar probe ``L = sum(r * layer(x))`` with fixed random ``r``.
    """
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x, train=train)
    r = rng.normal(size=out.shape)
    state = {k: v.copy() for k, v in layer.buffers().items()}

    def loss():
        for k, v in layer.buffers().items():
            v[...] = state[k]
        return float(np.sum(r * layer.forward(x, train=train)))

    for p in layer.params().values():
        p.zero_grad()
    loss()
    gx = layer.backward(r)
    analytic = {"input": gx}
    analytic.update({k: p.grad.copy() for k, p in layer.params().items()})
    errs = {"input": rel_error(gx, numerical_grad(loss, x, h))}
    for k, p in layer.params().items():
        errs[k] = rel_error(analytic[k], numerical_grad(loss, p.data, h))
    return errs
