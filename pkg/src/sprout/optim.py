"""AdamW with decoupled weight decay, categorical cross-entropy, L2 penalty.

Decay is skipped for batchnorm scale/shift and biases; the L2 penalty is a
separate in-loss term over the regularized head kernels, so both mechanisms
coexist (decay shrinks parameters directly, L2 shows up in the reported loss
and its gradients).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Tensor


def decay_applies(name: str) -> bool:
    """Weight decay targets kernels only, not BN gamma/beta or biases."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf not in ("bias", "gamma", "beta")


class AdamW:
    """Decoupled-weight-decay Adam over named parameter tensors.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
    """

    def __init__(self, learning_rate: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-7,
                 weight_decay: float = 0.004):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.step_count = 0
        self.slots: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _slot(self, name: str, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mv = self.slots.get(name)
        if mv is None or mv[0].shape != p.shape:
            mv = (np.zeros_like(p), np.zeros_like(p))
            self.slots[name] = mv
        return mv

    def step(self, named_params: list[tuple[str, Tensor]]) -> None:
        """One update over every tensor that has a gradient set."""
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        lr = self.learning_rate
        for name, tensor in named_params:
            g = tensor.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name!r}; step aborted")
            p = tensor.data
            m, v = self._slot(name, p)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            if self.weight_decay and decay_applies(name):
                update = update + self.weight_decay * p
            p -= (lr * update).astype(p.dtype, copy=False)

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Moment arrays under optim.m.<name> / optim.v.<name> for archiving."""
        out: dict[str, np.ndarray] = {}
        for name, (m, v) in self.slots.items():
            out[f"optim.m.{name}"] = m
            out[f"optim.v.{name}"] = v
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for key, arr in tensors.items():
            if key.startswith("optim.m."):
                name = key[len("optim.m."):]
                v = tensors.get(f"optim.v.{name}")
                if v is None:
                    raise KeyError(f"optimizer archive missing optim.v.{name}")
                self.slots[name] = (arr.copy(), v.copy())


def adamw_step(params: list[tuple[str, Tensor]], optimizer: AdamW) -> None:
    optimizer.step(params)


def cce_loss(probs: np.ndarray, onehot: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and the fused gradient w.r.t. logits.

    Returns (loss, (p - y) / N); probabilities are clamped to >= 1e-12 before
    the log so an exactly-zero predicted probability cannot produce inf.
    """
    if probs.shape != onehot.shape or probs.ndim != 2:
        raise ShapeError(f"probs {probs.shape} vs onehot {onehot.shape}")
    _check_onehot(onehot)
    n = probs.shape[0]
    p_true = np.sum(probs * onehot, axis=1)
    loss = float(-np.mean(np.log(np.maximum(p_true, 1e-12))))
    dlogits = (probs - onehot) / n
    return loss, dlogits.astype(probs.dtype, copy=False)


def _check_onehot(onehot: np.ndarray) -> None:
    ones = np.count_nonzero(onehot == 1, axis=1)
    nonzero = np.count_nonzero(onehot, axis=1)
    if not (np.all(ones == 1) and np.all(nonzero == 1)):
        bad = int(np.argmax((ones != 1) | (nonzero != 1)))
        raise ValueError(f"row {bad} of labels is not one-hot")


def l2_penalty(model, lam: float, accumulate: bool = True) -> float:
    """lam * sum(w^2) over the regularized head kernels; adds 2*lam*w to each
    kernel's gradient when accumulate is set."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    penalty = 0.0
    if lam == 0.0:
        return penalty
    for _, tensor in model.regularized_kernels():
        w = tensor.data
        penalty += lam * float(np.sum(np.square(w, dtype=np.float64)))
        if accumulate:
            tensor.add_grad(2.0 * lam * w)
    return penalty
