"""Numpy kernels with hand-written backward passes for a small U-Net.

All tensors are float64 arrays in (batch, channels, height, width) layout.
Each differentiable op comes as a ``forward``/``backward`` pair of plain
functions; the layer classes below wrap them with a parameter registry and
a forward cache.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError, UsageError

BCE_EPS = 1e-7


class Parameter:
    """A trainable array paired with a gradient buffer of the same shape."""

    def __init__(self, data, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _resolve_padding(padding: Union[int, str], k: int) -> int:
    if padding == "same":
        if k % 2 == 0:
            raise ValueError("same padding needs an odd kernel")
        return k // 2
    if padding == "valid":
        return 0
    return int(padding)


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


# ---------------------------------------------------------------- convolution

def conv2d(x, kernel, bias=None, padding: Union[int, str] = 0) -> np.ndarray:
    """Stride-1 cross-correlation. ``kernel`` is (out, in, kh, kw)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    kh, kw = kernel.shape[2:]
    p = _resolve_padding(padding, kh)
    win = sliding_window_view(_pad(x, p), (kh, kw), axis=(2, 3))
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(grad_out, x, kernel, padding: Union[int, str] = 0, bias: bool = True):
    """Gradients of :func:`conv2d` w.r.t. input, kernel and (optionally) bias."""
    kh, kw = kernel.shape[2:]
    p = _resolve_padding(padding, kh)
    win = sliding_window_view(_pad(x, p), (kh, kw), axis=(2, 3))
    g_kernel = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
    # full correlation of grad_out with the flipped kernel, cropped by the forward padding
    gwin = sliding_window_view(_pad(grad_out, kh - 1 - p), (kh, kw), axis=(2, 3))
    flipped = kernel[:, :, ::-1, ::-1]
    g_x = np.tensordot(gwin, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
    g_bias = grad_out.sum(axis=(0, 2, 3)) if bias else None
    return np.ascontiguousarray(g_x), g_kernel, g_bias


def _full_size(n: int, k: int) -> int:
    return max(2 * (n - 1) + k, 2 * n)


def conv2d_stride2(y, kernel) -> np.ndarray:
    """Stride-2 correlation that is the adjoint of :func:`transposed_conv2`.

    ``y`` is (N, out, 2H, 2W) and ``kernel`` is (in, out, k, k); returns
    (N, in, H, W).
    """
    k = kernel.shape[2]
    h, w = y.shape[2] // 2, y.shape[3] // 2
    full = np.zeros(y.shape[:2] + (_full_size(h, k), _full_size(w, k)))
    full[:, :, : y.shape[2], : y.shape[3]] = y
    win = sliding_window_view(full, (k, k), axis=(2, 3))[:, :, ::2, ::2][:, :, :h, :w]
    return np.ascontiguousarray(
        np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    )


def transposed_conv2(x, kernel, bias=None) -> np.ndarray:
    """Stride-2 transposed convolution that doubles H and W.

    ``kernel`` is (in, out, k, k). For k > 2 the trailing rows and columns of
    the full output are cropped so the result is exactly (2H, 2W).
    """
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"transposed_conv2: input {x.shape} incompatible with kernel {kernel.shape}")
    k = kernel.shape[2]
    if k < 2 or kernel.shape[3] != k:
        raise ShapeError(f"transposed_conv2 needs a square kernel of size >= 2, got {kernel.shape}")
    n, _, h, w = x.shape
    contrib = np.tensordot(x, kernel, axes=([1], [0]))  # (N, H, W, out, k, k)
    full = np.zeros((n, kernel.shape[1], _full_size(h, k), _full_size(w, k)))
    for a in range(k):
        for b in range(k):
            full[:, :, a : a + 2 * h : 2, b : b + 2 * w : 2] += contrib[..., a, b].transpose(0, 3, 1, 2)
    out = full[:, :, : 2 * h, : 2 * w]
    if bias is not None:
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def transposed_conv2_backward(grad_out, x, kernel, bias: bool = True):
    k = kernel.shape[2]
    h, w = x.shape[2:]
    g_x = conv2d_stride2(grad_out, kernel)
    full = np.zeros(grad_out.shape[:2] + (_full_size(h, k), _full_size(w, k)))
    full[:, :, : 2 * h, : 2 * w] = grad_out
    win = sliding_window_view(full, (k, k), axis=(2, 3))[:, :, ::2, ::2][:, :, :h, :w]
    g_kernel = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3]))
    g_bias = grad_out.sum(axis=(0, 2, 3)) if bias else None
    return g_x, g_kernel, g_bias


# ------------------------------------------------------------------- pooling

def maxpool2(x):
    """2x2 / stride-2 max pool; returns ``(out, argmax)`` for the backward pass.

    Ties go to the first element of the window in row-major order.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2_backward(grad_out, argmax):
    n, c, h2, w2 = grad_out.shape
    windows = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(windows, argmax[..., None], grad_out[..., None], axis=-1)
    return windows.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)


# --------------------------------------------------------------- elementwise

def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    # subgradient at exactly 0 is 0
    return grad_out * (x > 0)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out, out):
    return grad_out * out * (1.0 - out)


def concat_channels(a, b):
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    return np.concatenate([a, b], axis=1)


# ---------------------------------------------------------------------- loss

def bce_loss(pred, target) -> float:
    """Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7]."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p)))


def bce_loss_backward(pred, target) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    grad = (p - target) / (p * (1.0 - p)) / pred.size
    inside = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    return grad * inside


# -------------------------------------------------------------------- layers

class Module:
    """Base for layers that cache their input in ``forward``."""

    def parameters(self) -> Dict[str, Parameter]:
        return {}

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad[...] = 0.0

    def _cached(self):
        if getattr(self, "_cache", None) is None:
            raise UsageError(f"{type(self).__name__}.backward called before forward")
        cache, self._cache = self._cache, None
        return cache


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel_size=3, bias=True, padding="same", rng=None, name="conv"):
        rng = np.random.default_rng(0) if rng is None else rng
        rf = kernel_size * kernel_size
        self.weight = Parameter(
            glorot_uniform((out_ch, in_ch, kernel_size, kernel_size), in_ch * rf, out_ch * rf, rng),
            name=f"{name}.weight",
        )
        self.bias = Parameter(np.zeros(out_ch), name=f"{name}.bias") if bias else None
        self.padding = padding
        self.name = name
        self._cache = None

    def parameters(self):
        params = {self.weight.name: self.weight}
        if self.bias is not None:
            params[self.bias.name] = self.bias
        return params

    def forward(self, x):
        self._cache = x
        return conv2d(x, self.weight.data, None if self.bias is None else self.bias.data, self.padding)

    def backward(self, grad_out):
        x = self._cached()
        g_x, g_w, g_b = conv2d_backward(grad_out, x, self.weight.data, self.padding, self.bias is not None)
        self.weight.grad += g_w
        if self.bias is not None:
            self.bias.grad += g_b
        return g_x


class ConvTranspose2d(Module):
    """Stride-2 upsampling; kernel stored as (in, out, k, k)."""

    def __init__(self, in_ch, out_ch, kernel_size=2, bias=True, rng=None, name="up"):
        rng = np.random.default_rng(0) if rng is None else rng
        rf = kernel_size * kernel_size
        self.weight = Parameter(
            glorot_uniform((in_ch, out_ch, kernel_size, kernel_size), in_ch * rf, out_ch * rf, rng),
            name=f"{name}.weight",
        )
        self.bias = Parameter(np.zeros(out_ch), name=f"{name}.bias") if bias else None
        self.name = name
        self._cache = None

    def parameters(self):
        params = {self.weight.name: self.weight}
        if self.bias is not None:
            params[self.bias.name] = self.bias
        return params

    def forward(self, x):
        self._cache = x
        return transposed_conv2(x, self.weight.data, None if self.bias is None else self.bias.data)

    def backward(self, grad_out):
        x = self._cached()
        g_x, g_w, g_b = transposed_conv2_backward(grad_out, x, self.weight.data, self.bias is not None)
        self.weight.grad += g_w
        if self.bias is not None:
            self.bias.grad += g_b
        return g_x


class MaxPool2(Module):
    def forward(self, x):
        out, self._cache = maxpool2(x)
        return out

    def backward(self, grad_out):
        return maxpool2_backward(grad_out, self._cached())


class ReLU(Module):
    def forward(self, x):
        self._cache = x
        return relu(x)

    def backward(self, grad_out):
        return relu_backward(grad_out, self._cached())


class Sigmoid(Module):
    def forward(self, x):
        out = sigmoid(x)
        self._cache = out
        return out

    def backward(self, grad_out):
        return sigmoid_backward(grad_out, self._cached())


class Identity(Module):
    def forward(self, x):
        return x

    def backward(self, grad_out):
        return grad_out


# ----------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def like(cls, params, **kwargs) -> "AdamState":
        params = np.asarray(params, dtype=np.float64)
        return cls(np.zeros_like(params), np.zeros_like(params), **kwargs)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns ``(new_params, state)``.

    ``state`` is updated in place.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ShapeError(
            f"params {params.shape}, grads {grads.shape} and moments {state.first_moment.shape} differ"
        )
    state.step_count += 1
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads**2
    m_hat = state.first_moment / (1.0 - state.beta1**state.step_count)
    v_hat = state.second_moment / (1.0 - state.beta2**state.step_count)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon), state


class Adam:
    """Adam over a name -> :class:`Parameter` registry."""

    def __init__(self, params: Dict[str, Parameter], lr: float = 1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = dict(params)
        self.states = {
            name: AdamState.like(p.data, lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
            for name, p in self.params.items()
        }

    def step(self):
        for name, p in self.params.items():
            p.data, _ = adam_step(p.data, p.grad, self.states[name])

    def zero_grad(self):
        for p in self.params.values():
            p.grad[...] = 0.0
