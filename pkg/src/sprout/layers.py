"""Network layers: forward passes, hand-derived backward passes, parameter
accounting.

Every layer caches what its backward pass needs during forward. Backward
returns the input gradient and stores parameter gradients on the parameter
tensors; frozen layers still propagate input gradients but skip their own
parameter gradients entirely.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError
from .rng import Rng
from .tensor import Tensor

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99


def _glorot(rng: Rng, shape, fan_in, fan_out, dtype):
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return Tensor.uniform(rng, shape, -limit, limit, dtype=dtype)


class Layer:
    """Base class; subclasses set kind and implement forward/backward."""

    kind = "?"

    def __init__(self, name: str):
        self.name = name
        self.index = -1            # assigned by the model builder
        self.frozen = False
        self.params: dict[str, Tensor] = {}   # trainable when not frozen
        self.buffers: dict[str, Tensor] = {}  # never trainable
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False,
                rng: Rng | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def param_counts(self) -> tuple[int, int]:
        """(trainable, non_trainable) with frozen params counted non-trainable."""
        p = sum(t.size for t in self.params.values())
        b = sum(t.size for t in self.buffers.values())
        return (0, p + b) if self.frozen else (p, b)

    def hyper(self) -> dict:
        return {}

    def _store_grad(self, pname: str, g: np.ndarray):
        if not self.frozen:
            self.params[pname].set_grad(g)

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class Input(Layer):
    kind = "input"

    def __init__(self, name: str, shape: tuple):
        super().__init__(name)
        self.shape = tuple(shape)

    def forward(self, x, training=False, rng=None):
        if tuple(x.shape[1:]) != self.shape:
            raise ShapeError(f"input shape {x.shape[1:]} != declared {self.shape}")
        return x

    def backward(self, dy):
        return dy

    def hyper(self):
        return {"shape": self.shape}


class ZeroPad2D(Layer):
    kind = "zeropad"

    def __init__(self, name: str, pad=(0, 1, 0, 1)):
        super().__init__(name)
        self.pad = tuple(int(p) for p in pad)

    def forward(self, x, training=False, rng=None):
        t, b, l, r = self.pad
        return np.pad(x, ((0, 0), (t, b), (l, r), (0, 0)))

    def backward(self, dy):
        t, b, l, r = self.pad
        h = dy.shape[1] - t - b
        w = dy.shape[2] - l - r
        return np.ascontiguousarray(dy[:, t : t + h, l : l + w, :])

    def out_shape(self, in_shape):
        h, w, c = in_shape
        t, b, l, r = self.pad
        return (h + t + b, w + l + r, c)

    def hyper(self):
        return {"pad": self.pad}


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, name, in_ch, out_ch, ksize, stride, pad, rng, dtype=np.float32):
        super().__init__(name)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.ksize, self.stride, self.pad = ksize, stride, tuple(pad)
        fan_in = ksize * ksize * in_ch
        fan_out = ksize * ksize * out_ch
        self.params["kernel"] = _glorot(
            rng, (ksize, ksize, in_ch, out_ch), fan_in, fan_out, dtype
        )

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return kernels.conv2d(x, self.params["kernel"].data, self.stride, self.pad)

    def backward(self, dy):
        x = self._cache
        dx, dk = kernels.conv2d_backward(
            x, self.params["kernel"].data, dy, self.stride, self.pad,
            need_dk=not self.frozen,
        )
        if dk is not None:
            self._store_grad("kernel", dk)
        return dx

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.in_ch:
            raise ShapeError(f"{self.name}: expected {self.in_ch} channels, got {c}")
        t, b, l, r = self.pad
        ho = (h + t + b - self.ksize) // self.stride + 1
        wo = (w + l + r - self.ksize) // self.stride + 1
        if ho <= 0 or wo <= 0:
            raise ShapeError(f"{self.name}: non-positive output extent {ho}x{wo}")
        return (ho, wo, self.out_ch)

    def hyper(self):
        return {"ksize": self.ksize, "stride": self.stride, "pad": self.pad,
                "filters": self.out_ch}


class DepthwiseConv2D(Layer):
    kind = "depthwise-conv"

    def __init__(self, name, channels, ksize, stride, pad, rng, dtype=np.float32):
        super().__init__(name)
        self.channels = channels
        self.ksize, self.stride, self.pad = ksize, stride, tuple(pad)
        fan = ksize * ksize
        self.params["kernel"] = _glorot(
            rng, (ksize, ksize, channels), fan, fan, dtype
        )

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return kernels.depthwise2d(x, self.params["kernel"].data, self.stride, self.pad)

    def backward(self, dy):
        x = self._cache
        dx, dk = kernels.depthwise2d_backward(
            x, self.params["kernel"].data, dy, self.stride, self.pad,
            need_dk=not self.frozen,
        )
        if dk is not None:
            self._store_grad("kernel", dk)
        return dx

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {c}")
        t, b, l, r = self.pad
        ho = (h + t + b - self.ksize) // self.stride + 1
        wo = (w + l + r - self.ksize) // self.stride + 1
        if ho <= 0 or wo <= 0:
            raise ShapeError(f"{self.name}: non-positive output extent {ho}x{wo}")
        return (ho, wo, c)

    def hyper(self):
        return {"ksize": self.ksize, "stride": self.stride, "pad": self.pad}


class BatchNorm(Layer):
    """Per-channel batch normalization over the batch (and spatial) axes.

    Train mode normalizes by batch statistics (biased variance) and updates
    the moving statistics as m <- momentum*m + (1-momentum)*batch_stat.
    Inference mode normalizes by the moving statistics. A frozen layer is
    pinned to inference mode regardless of the training flag.
    """

    kind = "batchnorm"

    def __init__(self, name, channels, momentum=BN_MOMENTUM, epsilon=BN_EPSILON,
                 dtype=np.float32):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        self.params["gamma"] = Tensor.full((channels,), 1.0, dtype=dtype)
        self.params["beta"] = Tensor.zeros((channels,), dtype=dtype)
        self.buffers["moving_mean"] = Tensor.zeros((channels,), dtype=dtype)
        self.buffers["moving_var"] = Tensor.full((channels,), 1.0, dtype=dtype)

    def _axes(self, x):
        if x.ndim == 4:
            return (0, 1, 2)
        if x.ndim == 2:
            return (0,)
        raise ShapeError(f"{self.name}: batchnorm input must be 2d or 4d, got {x.shape}")

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, "
                             f"got {x.shape[-1]}")
        axes = self._axes(x)
        gamma = self.params["gamma"].data
        beta = self.params["beta"].data
        if training and not self.frozen:
            if x.shape[0] == 0:
                raise ShapeError(f"{self.name}: zero batch size in train mode")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            mm, mv = self.buffers["moving_mean"], self.buffers["moving_var"]
            mm.data[:] = self.momentum * mm.data + (1.0 - self.momentum) * mean
            mv.data[:] = self.momentum * mv.data + (1.0 - self.momentum) * var
            self._train_mode = True
        else:
            mean = self.buffers["moving_mean"].data
            var = self.buffers["moving_var"].data
            self._train_mode = False
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xc = x - mean
        xhat = xc * inv_std
        self._cache = (xc, xhat, inv_std, axes, x.shape)
        return (gamma * xhat + beta).astype(x.dtype, copy=False)

    def backward(self, dy):
        xc, xhat, inv_std, axes, xshape = self._cache
        gamma = self.params["gamma"].data
        if not self.frozen:
            self._store_grad("gamma", np.sum(dy * xhat, axis=axes))
            self._store_grad("beta", np.sum(dy, axis=axes))
        dxhat = dy * gamma
        if not self._train_mode:
            return (dxhat * inv_std).astype(dy.dtype, copy=False)
        m = np.prod([xshape[a] for a in axes])
        dvar = np.sum(dxhat * xc, axis=axes) * (-0.5) * inv_std**3
        dmean = (np.sum(-dxhat * inv_std, axis=axes)
                 + dvar * np.sum(-2.0 * xc, axis=axes) / m)
        dx = dxhat * inv_std + dvar * 2.0 * xc / m + dmean / m
        return dx.astype(dy.dtype, copy=False)

    def hyper(self):
        return {"momentum": self.momentum, "epsilon": self.epsilon}


class Activation(Layer):
    kind = "activation"
    KINDS = ("relu", "relu6", "softmax")

    def __init__(self, name, fn: str):
        super().__init__(name)
        if fn not in self.KINDS:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def forward(self, x, training=False, rng=None):
        y = apply_activation(x, self.fn)
        self._cache = x if self.fn != "softmax" else y
        return y

    def backward(self, dy):
        return activation_grad(dy, self._cache, self.fn)

    def hyper(self):
        return {"fn": self.fn}


def apply_activation(x: np.ndarray, fn: str) -> np.ndarray:
    if fn == "relu":
        return np.maximum(x, 0)
    if fn == "relu6":
        return np.clip(x, 0, 6)
    if fn == "softmax":
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {fn!r}")


def activation_grad(dy: np.ndarray, cache: np.ndarray, fn: str) -> np.ndarray:
    """cache is the input for relu/relu6, the output (probabilities) for softmax."""
    if fn == "relu":
        return dy * (cache > 0)
    if fn == "relu6":
        return dy * ((cache > 0) & (cache < 6))
    if fn == "softmax":
        p = cache
        return p * (dy - np.sum(dy * p, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {fn!r}")


class GlobalAvgPool(Layer):
    kind = "global-avg-pool"

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected NHWC input, got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dy):
        n, h, w, c = self._cache
        return np.broadcast_to(dy[:, None, None, :] / (h * w), (n, h, w, c)).copy()

    def out_shape(self, in_shape):
        h, w, c = in_shape
        return (c,)


class Dropout(Layer):
    """Inverted dropout: scales survivors at train time, identity at inference."""

    kind = "dropout"

    def __init__(self, name, rate):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.freeze_mask = False   # reuse the last mask (gradient checking)

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._cache = None
            return x
        if self.freeze_mask and self._cache is not None:
            scale = self._cache
        else:
            if rng is None:
                raise ValueError(f"{self.name}: train-mode dropout needs an rng")
            u = rng.fill_uniform(x.size).reshape(x.shape)
            scale = (u >= self.rate).astype(x.dtype) / x.dtype.type(1.0 - self.rate)
            self._cache = scale
        return x * scale

    def backward(self, dy):
        if self._cache is None:
            return dy
        return dy * self._cache

    def hyper(self):
        return {"rate": self.rate}


class Dense(Layer):
    """Affine layer with an optional fused activation and optional L2 tag."""

    kind = "dense"

    def __init__(self, name, in_dim, units, rng, activation=None, regularized=False,
                 dtype=np.float32):
        super().__init__(name)
        self.in_dim, self.units = in_dim, units
        self.activation = activation
        self.regularized = regularized
        self.params["kernel"] = _glorot(rng, (in_dim, units), in_dim, units, dtype)
        self.params["bias"] = Tensor.zeros((units,), dtype=dtype)

    def forward(self, x, training=False, rng=None):
        w, b = self.params["kernel"].data, self.params["bias"].data
        if x.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeError(
                f"{self.name}: input {x.shape} does not match kernel {w.shape}"
            )
        z = kernels.matmul(x, w) + b
        y = apply_activation(z, self.activation) if self.activation else z
        self._cache = (x, z if self.activation != "softmax" else y)
        return y

    def backward(self, dy, dy_is_preactivation: bool = False):
        x, act_cache = self._cache
        if self.activation and not dy_is_preactivation:
            dz = activation_grad(dy, act_cache, self.activation)
        else:
            dz = dy
        if not self.frozen:
            self._store_grad("kernel", x.T @ dz)
            self._store_grad("bias", dz.sum(axis=0))
        return dz @ self.params["kernel"].data.T

    def out_shape(self, in_shape):
        (d,) = in_shape
        if d != self.in_dim:
            raise ShapeError(f"{self.name}: expected input dim {self.in_dim}, got {d}")
        return (self.units,)

    def hyper(self):
        return {"units": self.units, "activation": self.activation,
                "regularized": self.regularized}
