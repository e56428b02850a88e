"""Convolution/matmul kernels with a compiled core and a numpy fallback.

The hot spatial kernels (standard and depthwise convolution, forward and
backward) have two interchangeable implementations:

* ``_convext`` - Cython extension, fixed ascending loop order;
* ``pykernels`` - vectorized numpy (im2col + BLAS, strided slices).

The compiled backend is selected at import when available; set
``SPROUT_BACKEND=python`` or ``SPROUT_BACKEND=ext`` to force one. Pointwise
1x1 convolutions lower to a single BLAS matmul on both backends, as do dense
layers; BLAS keeps a fixed partitioning for a fixed thread count, so results
are reproducible run to run either way.

All kernels take NHWC inputs; padding is explicit (top, bottom, left, right).
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ShapeError
from . import pykernels

try:  # compiled extension is optional
    from . import _convext
except ImportError:  # pragma: no cover - build environment dependent
    _convext = None

_FORCED = os.environ.get("SPROUT_BACKEND", "").strip().lower()
if _FORCED == "python":
    _impl = pykernels
elif _FORCED == "ext":
    if _convext is None:
        raise ImportError("SPROUT_BACKEND=ext but the compiled kernels are not built")
    _impl = _convext
else:
    _impl = _convext if _convext is not None else pykernels


def backend_name() -> str:
    return "ext" if _impl is _convext else "python"


def have_ext() -> bool:
    return _convext is not None


def available_backends() -> tuple[str, ...]:
    return ("python", "ext") if _convext is not None else ("python",)


def set_backend(name: str) -> None:
    """Switch kernel backend ('ext' or 'python'). Mainly for tests/benchmarks."""
    global _impl
    if name == "python":
        _impl = pykernels
    elif name == "ext":
        if _convext is None:
            raise ValueError("compiled kernels are not available")
        _impl = _convext
    else:
        raise ValueError(f"unknown backend {name!r}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product (M,K) @ (K,N)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return a @ b


def _check_pad(pad) -> tuple:
    t, b, l, r = (int(p) for p in pad)
    if min(t, b, l, r) < 0:
        raise ShapeError(f"negative padding {pad}")
    return t, b, l, r


def _pad(x: np.ndarray, pad) -> np.ndarray:
    t, b, l, r = pad
    if t == b == l == r == 0:
        return x
    return np.pad(x, ((0, 0), (t, b), (l, r), (0, 0)))


def _conv_geometry(x, kh, kw, stride, pad, kind):
    if x.ndim != 4:
        raise ShapeError(f"{kind}: input must be NHWC, got shape {x.shape}")
    if stride < 1:
        raise ShapeError(f"{kind}: stride must be >= 1, got {stride}")
    t, b, l, r = _check_pad(pad)
    ho = (x.shape[1] + t + b - kh) // stride + 1
    wo = (x.shape[2] + l + r - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"{kind}: non-positive output extent {ho}x{wo} for input {x.shape}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {pad}"
        )
    return (t, b, l, r), ho, wo


def _is_pointwise(k, stride, pad):
    return k.shape[0] == 1 and k.shape[1] == 1 and stride == 1 and pad == (0, 0, 0, 0)


def conv2d(x: np.ndarray, k: np.ndarray, stride: int = 1,
           pad=(0, 0, 0, 0)) -> np.ndarray:
    """Standard correlation: (N,H,W,C) x (kh,kw,C,F) -> (N,Ho,Wo,F)."""
    if k.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (kh,kw,C,F), got {k.shape}")
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be NHWC, got shape {x.shape}")
    if x.shape[3] != k.shape[2]:
        raise ShapeError(
            f"conv2d: input channels {x.shape} do not match kernel {k.shape}"
        )
    pad, ho, wo = _conv_geometry(x, k.shape[0], k.shape[1], stride, pad, "conv2d")
    if _is_pointwise(k, stride, pad):
        n, h, w, c = x.shape
        f = k.shape[3]
        y = matmul(x.reshape(n * h * w, c), k.reshape(c, f))
        return y.reshape(n, h, w, f)
    xp = np.ascontiguousarray(_pad(x, pad))
    return _impl.conv2d_valid(xp, np.ascontiguousarray(k), stride)


def conv2d_backward(x, k, dy, stride=1, pad=(0, 0, 0, 0), need_dk=True):
    """Gradients of conv2d: returns (dx, dk); dk is None when need_dk is False."""
    pad = _check_pad(pad)
    if _is_pointwise(k, stride, pad):
        n, h, w, c = x.shape
        f = k.shape[3]
        dym = dy.reshape(n * h * w, f)
        dk = None
        if need_dk:
            dk = (x.reshape(n * h * w, c).T @ dym).reshape(k.shape)
        dx = (dym @ k.reshape(c, f).T).reshape(x.shape)
        return dx, dk
    xp = np.ascontiguousarray(_pad(x, pad))
    dxp, dk = _impl.conv2d_valid_backward(
        xp, np.ascontiguousarray(k), np.ascontiguousarray(dy), stride, need_dk
    )
    t, b, l, r = pad
    dx = dxp[:, t : t + x.shape[1], l : l + x.shape[2], :]
    return np.ascontiguousarray(dx), dk


def depthwise2d(x: np.ndarray, k: np.ndarray, stride: int = 1,
                pad=(0, 0, 0, 0)) -> np.ndarray:
    """Depthwise correlation: (N,H,W,C) x (kh,kw,C) -> (N,Ho,Wo,C)."""
    if k.ndim != 3:
        raise ShapeError(f"depthwise2d: kernel must be (kh,kw,C), got {k.shape}")
    if x.ndim != 4:
        raise ShapeError(f"depthwise2d: input must be NHWC, got shape {x.shape}")
    if x.shape[3] != k.shape[2]:
        raise ShapeError(
            f"depthwise2d: input channels {x.shape} do not match kernel {k.shape}"
        )
    pad, _, _ = _conv_geometry(x, k.shape[0], k.shape[1], stride, pad, "depthwise2d")
    xp = np.ascontiguousarray(_pad(x, pad))
    return _impl.depthwise_valid(xp, np.ascontiguousarray(k), stride)


def depthwise2d_backward(x, k, dy, stride=1, pad=(0, 0, 0, 0), need_dk=True):
    """Gradients of depthwise2d: returns (dx, dk)."""
    pad = _check_pad(pad)
    xp = np.ascontiguousarray(_pad(x, pad))
    dxp, dk = _impl.depthwise_valid_backward(
        xp, np.ascontiguousarray(k), np.ascontiguousarray(dy), stride, need_dk
    )
    t, b, l, r = pad
    dx = dxp[:, t : t + x.shape[1], l : l + x.shape[2], :]
    return np.ascontiguousarray(dx), dk
