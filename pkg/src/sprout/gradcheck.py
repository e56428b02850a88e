"""Finite-difference gradient checking for layers.

Checks the analytic gradients of a scalar projection loss L = sum(W * y)
against central differences (f(x+eps) - f(x-eps)) / 2eps in double
precision, over every input coordinate and every parameter coordinate.
The projection weights W are fixed random values so that layers whose
plain output sum has a degenerate gradient (softmax) are still exercised.
"""

from __future__ import annotations

import numpy as np

from .layers import Layer
from .rng import Rng
from .tensor import assert_finite


def _loss(layer: Layer, x: np.ndarray, w: np.ndarray, training: bool,
          rng: Rng | None) -> float:
    y = layer.forward(x, training=training, rng=rng)
    return float(np.sum(w * y))


def grad_check(layer: Layer, x: np.ndarray, epsilon: float = 1e-5,
               training: bool = False, seed: int = 0) -> float:
    """Return the worst relative error across all input/parameter gradients.

    The layer must be deterministic across repeated forwards (run dropout in
    inference mode or with freeze_mask set). Relative error uses a unit
    floor: |a - n| / max(|a|, |n|, 1).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    for t in list(layer.params.values()) + list(layer.buffers.values()):
        t.data = t.data.astype(np.float64)
    saved_buffers = {k: t.data.copy() for k, t in layer.buffers.items()}
    if hasattr(layer, "freeze_mask"):
        layer.freeze_mask = True   # stochastic layers must reuse their draw
    rng = Rng(seed)

    y = layer.forward(x, training=training, rng=rng)
    assert_finite(y, f"{layer.name} forward output")
    w = Rng(seed ^ 0x5EED).fill_uniform(y.size, -1.0, 1.0).reshape(y.shape)

    for t in layer.params.values():
        t.zero_grad()
    dx = layer.backward(w.copy())
    assert_finite(dx, f"{layer.name} input gradient")

    worst = 0.0

    def _compare(analytic: float, buf: np.ndarray, idx: int) -> float:
        orig = buf.flat[idx]
        buf.flat[idx] = orig + epsilon
        f_plus = _loss(layer, x, w, training, rng)
        buf.flat[idx] = orig - epsilon
        f_minus = _loss(layer, x, w, training, rng)
        buf.flat[idx] = orig
        numeric = (f_plus - f_minus) / (2 * epsilon)
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0)

    for i in range(x.size):
        worst = max(worst, _compare(dx.flat[i], x, i))
    if not layer.frozen:
        for name, t in layer.params.items():
            g = t.grad
            if g is None:
                raise AssertionError(f"{layer.name}.{name}: no gradient stored")
            assert_finite(g, f"{layer.name}.{name} gradient")
            for i in range(t.size):
                worst = max(worst, _compare(g.flat[i], t.data, i))

    for k, saved in saved_buffers.items():
        layer.buffers[k].data = saved
    if hasattr(layer, "freeze_mask"):
        layer.freeze_mask = False
    return worst
