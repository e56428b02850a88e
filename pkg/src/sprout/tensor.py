"""Dense tensor type: an n-d float array plus an optional gradient buffer.

Activations flow through the network as plain contiguous numpy arrays; the
Tensor class carries parameters (and anything a caller wants gradient
bookkeeping for). Training runs in float32; gradient-check builds use
float64.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError
from .rng import Rng


class Tensor:
    """Row-major float array with shape, values and an optional grad slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or np.float32, order="C", copy=True)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @classmethod
    def wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt an existing array without copying."""
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr)
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @classmethod
    def zeros(cls, shape, dtype=np.float32, requires_grad=False) -> "Tensor":
        return cls.wrap(np.zeros(shape, dtype=dtype), requires_grad)

    @classmethod
    def full(cls, shape, value, dtype=np.float32, requires_grad=False) -> "Tensor":
        return cls.wrap(np.full(shape, value, dtype=dtype), requires_grad)

    @classmethod
    def uniform(cls, rng: Rng, shape, lo: float, hi: float, dtype=np.float32,
                requires_grad=False) -> "Tensor":
        n = int(np.prod(shape)) if shape else 1
        vals = rng.fill_uniform(n, lo, hi).reshape(shape).astype(dtype)
        return cls.wrap(vals, requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def set_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match value shape {self.data.shape}"
            )
        self.grad = np.ascontiguousarray(g, dtype=self.data.dtype)

    def add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.set_grad(np.array(g, dtype=self.data.dtype))
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def copy(self) -> "Tensor":
        t = Tensor.wrap(self.data.copy(), self.requires_grad)
        if self.grad is not None:
            t.grad = self.grad.copy()
        return t

    def astype(self, dtype) -> "Tensor":
        return Tensor.wrap(self.data.astype(dtype), self.requires_grad)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"


def assert_finite(arr: np.ndarray, context: str) -> None:
    """Raise NumericError naming `context` if any value is NaN or infinite."""
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericError(f"{bad} non-finite value(s) in {context}")
