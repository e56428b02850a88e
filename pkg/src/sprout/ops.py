"""Functional tensor operations.

Thin Tensor-level wrappers over the kernel and layer primitives; the
training path uses the layer classes directly, this surface exists for
composing and testing individual operations.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError
from .layers import apply_activation
from .rng import Rng
from .tensor import Tensor


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor.wrap(kernels.matmul(a.data, b.data))


def conv2d_forward(x: Tensor, kernel: Tensor, stride: int = 1,
                   padding=(0, 0, 0, 0)) -> Tensor:
    return Tensor.wrap(kernels.conv2d(x.data, kernel.data, stride, padding))


def depthwise_conv2d_forward(x: Tensor, kernel: Tensor, stride: int = 1,
                             padding=(0, 0, 0, 0)) -> Tensor:
    return Tensor.wrap(kernels.depthwise2d(x.data, kernel.data, stride, padding))


def batchnorm_forward(x: Tensor, gamma: Tensor, beta: Tensor, moving_mean: Tensor,
                      moving_var: Tensor, mode: str = "inference",
                      momentum: float = 0.99, epsilon: float = 1e-3) -> Tensor:
    """Normalize per channel; train mode also updates the moving statistics."""
    c = x.data.shape[-1]
    for name, t in (("gamma", gamma), ("beta", beta), ("moving_mean", moving_mean),
                    ("moving_var", moving_var)):
        if t.data.shape != (c,):
            raise ShapeError(f"batchnorm: {name} shape {t.data.shape} != ({c},)")
    if mode == "train":
        if x.data.shape[0] == 0:
            raise ShapeError("batchnorm: zero batch size in train mode")
        axes = (0, 1, 2) if x.data.ndim == 4 else (0,)
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        moving_mean.data[:] = momentum * moving_mean.data + (1 - momentum) * mean
        moving_var.data[:] = momentum * moving_var.data + (1 - momentum) * var
    elif mode == "inference":
        mean = moving_mean.data
        var = moving_var.data
    else:
        raise ValueError(f"batchnorm mode must be 'train' or 'inference', got {mode!r}")
    y = gamma.data * (x.data - mean) / np.sqrt(var + epsilon) + beta.data
    return Tensor.wrap(y.astype(x.data.dtype, copy=False))


def activation_forward(x: Tensor, kind: str) -> Tensor:
    return Tensor.wrap(apply_activation(x.data, kind))


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected NHWC input, got {x.shape}")
    return Tensor.wrap(x.data.mean(axis=(1, 2)))


def dropout_forward(x: Tensor, rate: float, mode: str, rng: Rng | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "inference" or rate == 0.0:
        return Tensor.wrap(x.data.copy())
    if mode != "train":
        raise ValueError(f"dropout mode must be 'train' or 'inference', got {mode!r}")
    u = rng.fill_uniform(x.size).reshape(x.shape)
    mask = (u >= rate).astype(x.data.dtype)
    return Tensor.wrap(x.data * mask / x.data.dtype.type(1.0 - rate))


def dense_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if bias.data.shape != (weight.data.shape[1],):
        raise ShapeError(
            f"dense: bias shape {bias.data.shape} != ({weight.data.shape[1]},)"
        )
    return Tensor.wrap(kernels.matmul(x.data, weight.data) + bias.data)


def rescale(x: Tensor, factor: float = 1.0 / 255.0) -> Tensor:
    return Tensor.wrap(x.data * x.data.dtype.type(factor))
