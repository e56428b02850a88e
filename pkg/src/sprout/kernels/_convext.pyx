# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (standard + depthwise, forward + backward).

Same contracts as sprout.kernels.pykernels: valid correlation on
already-padded NHWC arrays. Loop order is fixed and ascending, so
accumulation order (and therefore the result) is reproducible bit-for-bit
run to run.
"""

import numpy as np

cimport cython

ctypedef fused floating:
    float
    double


def conv2d_valid(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] k, int stride):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1], f = k.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    if floating is float:
        out_np = np.zeros((n, ho, wo, f), dtype=np.float32)
    else:
        out_np = np.zeros((n, ho, wo, f), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_np
    cdef Py_ssize_t i, oy, ox, ki, kj, ch, ff
    cdef floating xv
    with nogil:
        for i in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for ki in range(kh):
                        for kj in range(kw):
                            for ch in range(c):
                                xv = xp[i, oy * stride + ki, ox * stride + kj, ch]
                                for ff in range(f):
                                    out[i, oy, ox, ff] += xv * k[ki, kj, ch, ff]
    return out_np


def conv2d_valid_backward(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] k,
                          floating[:, :, :, ::1] dy, int stride, bint need_dk):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1], f = k.shape[3]
    cdef Py_ssize_t ho = dy.shape[1], wo = dy.shape[2]
    if floating is float:
        dxp_np = np.zeros((n, hp, wp, c), dtype=np.float32)
        dk_np = np.zeros((kh, kw, c, f), dtype=np.float32)
    else:
        dxp_np = np.zeros((n, hp, wp, c), dtype=np.float64)
        dk_np = np.zeros((kh, kw, c, f), dtype=np.float64)
    cdef floating[:, :, :, ::1] dxp = dxp_np
    cdef floating[:, :, :, ::1] dk = dk_np
    cdef Py_ssize_t i, oy, ox, ki, kj, ch, ff, iy, ix
    cdef floating g, xv, acc
    with nogil:
        for i in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for ki in range(kh):
                        for kj in range(kw):
                            iy = oy * stride + ki
                            ix = ox * stride + kj
                            for ch in range(c):
                                xv = xp[i, iy, ix, ch]
                                acc = 0
                                for ff in range(f):
                                    g = dy[i, oy, ox, ff]
                                    acc += k[ki, kj, ch, ff] * g
                                    if need_dk:
                                        dk[ki, kj, ch, ff] += xv * g
                                dxp[i, iy, ix, ch] += acc
    return dxp_np, (dk_np if need_dk else None)


def depthwise_valid(floating[:, :, :, ::1] xp, floating[:, :, ::1] k, int stride):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    if floating is float:
        out_np = np.zeros((n, ho, wo, c), dtype=np.float32)
    else:
        out_np = np.zeros((n, ho, wo, c), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_np
    cdef Py_ssize_t i, oy, ox, ki, kj, ch
    with nogil:
        for i in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for ki in range(kh):
                        for kj in range(kw):
                            for ch in range(c):
                                out[i, oy, ox, ch] += (
                                    xp[i, oy * stride + ki, ox * stride + kj, ch]
                                    * k[ki, kj, ch]
                                )
    return out_np


def depthwise_valid_backward(floating[:, :, :, ::1] xp, floating[:, :, ::1] k,
                             floating[:, :, :, ::1] dy, int stride, bint need_dk):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1]
    cdef Py_ssize_t ho = dy.shape[1], wo = dy.shape[2]
    if floating is float:
        dxp_np = np.zeros((n, hp, wp, c), dtype=np.float32)
        dk_np = np.zeros((kh, kw, c), dtype=np.float32)
    else:
        dxp_np = np.zeros((n, hp, wp, c), dtype=np.float64)
        dk_np = np.zeros((kh, kw, c), dtype=np.float64)
    cdef floating[:, :, :, ::1] dxp = dxp_np
    cdef floating[:, :, ::1] dk = dk_np
    cdef Py_ssize_t i, oy, ox, ki, kj, ch, iy, ix
    cdef floating g
    with nogil:
        for i in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for ki in range(kh):
                        for kj in range(kw):
                            iy = oy * stride + ki
                            ix = ox * stride + kj
                            for ch in range(c):
                                g = dy[i, oy, ox, ch]
                                dxp[i, iy, ix, ch] += g * k[ki, kj, ch]
                                if need_dk:
                                    dk[ki, kj, ch] += g * xp[i, iy, ix, ch]
    return dxp_np, (dk_np if need_dk else None)
