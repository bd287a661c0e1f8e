"""Layers with explicit forward/backward passes over NCHW float64 arrays.

Every layer caches what its backward pass needs during ``forward``; calling
``backward`` without a preceding ``forward`` raises ``RuntimeError``.
Parameter gradients are accumulated into ``Tensor.grad``.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ShapeError(ValueError):
    pass


class Layer:
    kind = "layer"

    def __init__(self, name: str | None = None):
        self.name = name or self.kind
        self._cache = None

    def params(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(in_shape)

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        return self._cache

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


# --- convolution helpers -------------------------------------------------
# Columns are laid out (C, k, k, N, oh, ow) so a conv is one (O, C*k*k) matmul.

def _im2col(x: np.ndarray, k: int, stride: int, dilation: int, oh: int, ow: int) -> np.ndarray:
    n, c = x.shape[:2]
    xt = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, oh, ow))
    hspan = stride * (oh - 1) + 1
    wspan = stride * (ow - 1) + 1
    for i in range(k):
        for j in range(k):
            r0, c0 = i * dilation, j * dilation
            cols[:, i, j] = xt[:, :, r0:r0 + hspan:stride, c0:c0 + wspan:stride]
    return cols


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int, stride: int,
            dilation: int) -> np.ndarray:
    n, c, h, w = shape
    oh, ow = cols.shape[-2:]
    out = np.zeros((c, n, h, w))
    hspan = stride * (oh - 1) + 1
    wspan = stride * (ow - 1) + 1
    for i in range(k):
        for j in range(k):
            r0, c0 = i * dilation, j * dilation
            out[:, :, r0:r0 + hspan:stride, c0:c0 + wspan:stride] += cols[:, i, j]
    return out.transpose(1, 0, 2, 3)


def _conv_out(size: int, k: int, stride: int, dilation: int, pad: int) -> int:
    return (size + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def _he(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Layer):
    """2D convolution (cross-correlation) with stride, dilation and zero padding.

    ``padding="same"`` keeps the spatial size for stride 1 (odd kernels only).
    """

    kind = "conv2d"

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1,
                 dilation: int = 1, padding: int | str = 0, bias: bool = True,
                 rng: np.random.Generator | None = None, name: str | None = None):
        if kernel < 1 or stride < 1 or dilation < 1:
            raise ValueError("kernel, stride and dilation must be >= 1")
        if dilation > 1 and type(self) is Conv2d:
            self.kind = "dilated-conv2d"
        super().__init__(name)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.dilation = kernel, stride, dilation
        if padding == "same":
            if (dilation * (kernel - 1)) % 2:
                raise ValueError("'same' padding needs an odd effective kernel")
            self.pad = dilation * (kernel - 1) // 2
        elif padding == "valid":
            self.pad = 0
        else:
            self.pad = int(padding)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(_he(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel))
        self.bias = Tensor(np.zeros(out_ch)) if bias else None

    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeError(f"expected (C={self.in_ch}, H, W), got {tuple(in_shape)}")
        oh = _conv_out(in_shape[1], self.kernel, self.stride, self.dilation, self.pad)
        ow = _conv_out(in_shape[2], self.kernel, self.stride, self.dilation, self.pad)
        if oh < 1 or ow < 1:
            raise ShapeError(f"input {tuple(in_shape)} too small for receptive field")
        return (self.out_ch, oh, ow)

    def forward(self, x, train=True):
        _, oh, ow = self.output_shape(x.shape[1:])
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = _im2col(xp, self.kernel, self.stride, self.dilation, oh, ow)
        n = x.shape[0]
        w2 = self.weight.data.reshape(self.out_ch, -1)
        out = (w2 @ cols.reshape(w2.shape[1], -1)).reshape(self.out_ch, n, oh, ow)
        out = out.transpose(1, 0, 2, 3)
        if self.bias is not None:
            out = out + self.bias.data[None, :, None, None]
        self._cache = (cols, xp.shape, x.shape)
        return np.ascontiguousarray(out)

    def backward(self, grad):
        cols, xp_shape, x_shape = self._need_cache()
        g2 = grad.transpose(1, 0, 2, 3).reshape(self.out_ch, -1)
        c2 = cols.reshape(-1, g2.shape[1])
        self.weight.accumulate((g2 @ c2.T).reshape(self.weight.shape))
        if self.bias is not None:
            self.bias.accumulate(grad.sum(axis=(0, 2, 3)))
        w2 = self.weight.data.reshape(self.out_ch, -1)
        gcols = (w2.T @ g2).reshape(cols.shape)
        gx = _col2im(gcols, xp_shape, self.kernel, self.stride, self.dilation)
        p = self.pad
        if p:
            gx = gx[:, :, p:p + x_shape[2], p:p + x_shape[3]]
        return np.ascontiguousarray(gx)


class ConvTranspose2d(Layer):
    """Transposed convolution; the adjoint of a strided Conv2d.

    Output size is ``(H - 1) * stride - 2 * padding + kernel + output_padding``.
    """

    kind = "transposed-conv2d"

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1,
                 padding: int | str = "same", output_padding: int = 0, bias: bool = True,
                 rng: np.random.Generator | None = None, name: str | None = None):
        if kernel < 1 or stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        super().__init__(name)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride = kernel, stride
        self.pad = (kernel - 1) // 2 if padding == "same" else int(padding)
        self.output_padding = output_padding
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(_he(rng, (in_ch, out_ch, kernel, kernel), in_ch * kernel * kernel))
        self.bias = Tensor(np.zeros(out_ch)) if bias else None

    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def _full(self, size):
        return (size - 1) * self.stride + self.kernel

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeError(f"expected (C={self.in_ch}, H, W), got {tuple(in_shape)}")
        oh = self._full(in_shape[1]) - 2 * self.pad + self.output_padding
        ow = self._full(in_shape[2]) - 2 * self.pad + self.output_padding
        if oh < 1 or ow < 1:
            raise ShapeError(f"non-positive output for input {tuple(in_shape)}")
        return (self.out_ch, oh, ow)

    def forward(self, x, train=True):
        _, oh, ow = self.output_shape(x.shape[1:])
        n, _, h, w = x.shape
        x2 = x.transpose(1, 0, 2, 3).reshape(self.in_ch, -1)
        w2 = self.weight.data.reshape(self.in_ch, -1)
        cols = (w2.T @ x2).reshape(self.out_ch, self.kernel, self.kernel, n, h, w)
        op = self.output_padding
        full_shape = (n, self.out_ch, self._full(h) + op, self._full(w) + op)
        full = _col2im(cols, full_shape, self.kernel, self.stride, 1)
        p = self.pad
        out = full[:, :, p:p + oh, p:p + ow]
        if self.bias is not None:
            out = out + self.bias.data[None, :, None, None]
        self._cache = (x2, full_shape, (h, w))
        return np.ascontiguousarray(out)

    def backward(self, grad):
        x2, full_shape, (h, w) = self._need_cache()
        p = self.pad
        gfull = np.zeros(full_shape)
        gfull[:, :, p:p + grad.shape[2], p:p + grad.shape[3]] = grad
        cols = _im2col(gfull, self.kernel, self.stride, 1, h, w)
        c2 = cols.reshape(self.out_ch * self.kernel * self.kernel, -1)
        self.weight.accumulate((x2 @ c2.T).reshape(self.weight.shape))
        if self.bias is not None:
            self.bias.accumulate(grad.sum(axis=(0, 2, 3)))
        w2 = self.weight.data.reshape(self.in_ch, -1)
        gx = (w2 @ c2).reshape(self.in_ch, full_shape[0], h, w)
        return np.ascontiguousarray(gx.transpose(1, 0, 2, 3))


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, window: int = 3, stride: int = 2, padding: str = "same",
                 name: str | None = None):
        if window < 1 or stride < 1:
            raise ValueError("window and stride must be >= 1")
        super().__init__(name)
        self.window, self.stride, self.padding = window, stride, padding

    def _pads(self, size):
        if self.padding == "valid":
            return 0, 0, (size - self.window) // self.stride + 1
        out = -(-size // self.stride)
        total = max((out - 1) * self.stride + self.window - size, 0)
        return total // 2, total - total // 2, out

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"expected (C, H, W), got {tuple(in_shape)}")
        oh = self._pads(in_shape[1])[2]
        ow = self._pads(in_shape[2])[2]
        if oh < 1 or ow < 1:
            raise ShapeError(f"input {tuple(in_shape)} smaller than pooling window")
        return (in_shape[0], oh, ow)

    def forward(self, x, train=True):
        self.output_shape(x.shape[1:])
        t, b, oh = self._pads(x.shape[2])
        l, r, ow = self._pads(x.shape[3])
        xp = np.pad(x, ((0, 0), (0, 0), (t, b), (l, r)), constant_values=-np.inf)
        # (C, k, k, N, oh, ow) -> (N, C, oh, ow, k*k)
        cols = _im2col(xp, self.window, self.stride, 1, oh, ow)
        k2 = self.window * self.window
        cols = cols.reshape(x.shape[1], k2, x.shape[0], oh, ow).transpose(2, 0, 3, 4, 1)
        idx = cols.argmax(axis=-1)
        out = np.take_along_axis(cols, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, xp.shape, (t, l), x.shape)
        return out

    def backward(self, grad):
        idx, xp_shape, (t, l), x_shape = self._need_cache()
        n, c, oh, ow = grad.shape
        k2 = self.window * self.window
        gcols = np.zeros((n, c, oh, ow, k2))
        np.put_along_axis(gcols, idx[..., None], grad[..., None], axis=-1)
        gcols = gcols.transpose(1, 4, 0, 2, 3).reshape(c, self.window, self.window, n, oh, ow)
        gx = _col2im(gcols, xp_shape, self.window, self.stride, 1)
        return np.ascontiguousarray(gx[:, :, t:t + x_shape[2], l:l + x_shape[3]])


class BatchNorm(Layer):
    """Batch normalisation over the channel axis of (N, C) or (N, C, H, W) input.

    Running statistics follow ``running = momentum * running + (1 - momentum) * batch``
    and are used when ``train=False``.
    """

    kind = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5,
                 name: str | None = None):
        super().__init__(name)
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.gamma = Tensor(np.ones(channels))
        self.beta = Tensor(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def output_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {tuple(in_shape)}")
        return tuple(in_shape)

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bc(self, v, x):
        return v[None, :] if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, train=True):
        self.output_shape(x.shape[1:])
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean[:] = m * self.running_mean + (1 - m) * mean
            self.running_var[:] = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bc(mean, x)) * self._bc(inv, x)
        self._cache = (xhat, inv, train)
        return xhat * self._bc(self.gamma.data, x) + self._bc(self.beta.data, x)

    def backward(self, grad):
        xhat, inv, train = self._need_cache()
        axes = self._axes(grad)
        self.gamma.accumulate((grad * xhat).sum(axis=axes))
        self.beta.accumulate(grad.sum(axis=axes))
        gxhat = grad * self._bc(self.gamma.data, grad)
        if not train:
            return gxhat * self._bc(inv, grad)
        m = grad.size // self.channels
        s1 = self._bc(gxhat.sum(axis=axes), grad)
        s2 = self._bc((gxhat * xhat).sum(axis=axes), grad)
        return self._bc(inv, grad) * (gxhat - s1 / m - xhat * s2 / m)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, name: str | None = None):
        super().__init__(name)
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(_he(rng, (out_features, in_features), in_features))
        self.bias = Tensor(np.zeros(out_features))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"expected ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x, train=True):
        self.output_shape(x.shape[1:])
        self._cache = x
        return x @ self.weight.data.T + self.bias.data

    def backward(self, grad):
        x = self._need_cache()
        self.weight.accumulate(grad.T @ x)
        self.bias.accumulate(grad.sum(axis=0))
        return grad @ self.weight.data


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=True):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._need_cache())


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=True):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad):
        return grad * self._need_cache()


class LeakyReLU(Layer):
    kind = "leaky-relu"

    def __init__(self, alpha: float = 0.01, name: str | None = None):
        super().__init__(name)
        self.alpha = alpha

    def forward(self, x, train=True):
        self._cache = x >= 0
        return np.where(self._cache, x, self.alpha * x)

    def backward(self, grad):
        return grad * np.where(self._need_cache(), 1.0, self.alpha)


def shifted_leaky_relu(x, t0: float = 0.0, alpha: float = 0.01):
    """Identity above ``t0``; below it, reflect with slope ``-alpha`` so the output never drops under ``t0``.

    ``x`` if ``x >= t0`` else ``-alpha * x + (1 + alpha) * t0``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if t0 < 0:
        raise ValueError("t0 must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= t0, x, -alpha * x + (1.0 + alpha) * t0)
    return float(out) if out.ndim == 0 else out


class ShiftedLeakyReLU(Layer):
    kind = "shifted-leaky-relu"

    def __init__(self, t0: float = 0.0, alpha: float = 0.01, name: str | None = None):
        if alpha <= 0 or t0 < 0:
            raise ValueError("need alpha > 0 and t0 >= 0")
        super().__init__(name)
        self.t0, self.alpha = t0, alpha

    def forward(self, x, train=True):
        self._cache = x >= self.t0
        out = shifted_leaky_relu(x, self.t0, self.alpha)
        # the reflected branch can round to t0 - ulp; the floor is a hard guarantee
        return np.maximum(out, self.t0)

    def backward(self, grad):
        return grad * np.where(self._need_cache(), 1.0, -self.alpha)


class Softmax(Layer):
    """Softmax over axis 1 (classes/channels)."""

    kind = "softmax"

    def forward(self, x, train=True):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        self._cache = p
        return p

    def backward(self, grad):
        p = self._need_cache()
        return p * (grad - (grad * p).sum(axis=1, keepdims=True))
