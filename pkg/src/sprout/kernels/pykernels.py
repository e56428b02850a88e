"""Vectorized numpy convolution kernels (the pure-Python fallback backend).

All functions work on already-padded NHWC arrays and compute *valid*
correlations only; padding, validation and the 1x1 fast path live in the
dispatching package. Standard convolutions lower to one BLAS matmul over
im2col patches; depthwise convolutions accumulate one strided slice per
kernel tap.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_extent(size: int, ksize: int, stride: int) -> int:
    return (size - ksize) // stride + 1


def conv2d_valid(xp: np.ndarray, k: np.ndarray, stride: int) -> np.ndarray:
    n, hp, wp, c = xp.shape
    kh, kw, _, f = k.shape
    ho, wo = _out_extent(hp, kh, stride), _out_extent(wp, kw, stride)
    # windows: (N, ho, wo, C, kh, kw) after striding
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.reshape(n * ho * wo, c * kh * kw)
    kmat = k.transpose(2, 0, 1, 3).reshape(c * kh * kw, f)
    return (cols @ kmat).reshape(n, ho, wo, f)


def conv2d_valid_backward(xp, k, dy, stride, need_dk=True):
    n, hp, wp, c = xp.shape
    kh, kw, _, f = k.shape
    _, ho, wo, _ = dy.shape
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    dk = None
    if need_dk:
        # (N,ho,wo,C,kh,kw) x (N,ho,wo,F) -> (C,kh,kw,F)
        dk = np.tensordot(win, dy, axes=([0, 1, 2], [0, 1, 2]))
        dk = np.ascontiguousarray(dk.transpose(1, 2, 0, 3))
    kmat = k.transpose(2, 0, 1, 3).reshape(c * kh * kw, f)
    dcols = dy.reshape(n * ho * wo, f) @ kmat.T
    dcols = dcols.reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, ki : ki + stride * ho : stride,
                kj : kj + stride * wo : stride, :] += dcols[:, :, :, :, ki, kj]
    return dxp, dk


def depthwise_valid(xp: np.ndarray, k: np.ndarray, stride: int) -> np.ndarray:
    n, hp, wp, c = xp.shape
    kh, kw, _ = k.shape
    ho, wo = _out_extent(hp, kh, stride), _out_extent(wp, kw, stride)
    y = np.zeros((n, ho, wo, c), dtype=xp.dtype)
    for ki in range(kh):
        for kj in range(kw):
            y += xp[:, ki : ki + stride * ho : stride,
                    kj : kj + stride * wo : stride, :] * k[ki, kj]
    return y


def depthwise_valid_backward(xp, k, dy, stride, need_dk=True):
    n, hp, wp, c = xp.shape
    kh, kw, _ = k.shape
    _, ho, wo, _ = dy.shape
    dxp = np.zeros_like(xp)
    dk = np.zeros_like(k) if need_dk else None
    for ki in range(kh):
        for kj in range(kw):
            sl = (slice(None), slice(ki, ki + stride * ho, stride),
                  slice(kj, kj + stride * wo, stride), slice(None))
            if need_dk:
                dk[ki, kj] = np.einsum("nhwc,nhwc->c", xp[sl], dy)
            dxp[sl] += dy * k[ki, kj]
    return dxp, dk
