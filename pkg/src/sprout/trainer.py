"""Epoch loop with per-epoch validation and the three callback state machines:
best-only checkpointing, reduce-LR-on-plateau, early stopping with weight
restoration.

"Improvement" everywhere means a strict decrease of validation loss (zero
min-delta by default, configurable). The three callbacks run after each
epoch's validation, in the fixed order checkpoint -> reduce-LR -> early-stop,
and each keeps its own improvement tracker so the state machines stay
independent; the shared best_val_loss/best_weights fields are maintained by
the checkpoint step. Callbacks are pure functions of (state, val_loss), so
scripted loss traces replay them exactly with no model in the loop.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .metrics import batch_accuracy
from .model import ModelGraph
from .optim import AdamW, cce_loss, l2_penalty
from .rng import Rng, mix64


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    initial_lr: float = 0.001
    image_size: int = 224
    lambda_l2: float = 0.01
    weight_decay: float = 0.004
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    es_patience: int = 10
    lr_patience: int = 5
    lr_factor: float = 0.5
    min_lr: float = 1e-6
    restore_best: bool = True
    min_delta: float = 0.0
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.initial_lr <= 0:
            raise ValueError(f"initial_lr must be positive, got {self.initial_lr}")


@dataclass
class CallbackState:
    current_lr: float = 0.001
    min_delta: float = 0.0
    best_val_loss: float = math.inf
    best_epoch: int = 0
    best_weights: dict | None = None
    epochs_since_improve_es: int = 0
    epochs_since_improve_lr: int = 0
    stopped: bool = False
    epoch: int = 0
    # Per-callback improvement trackers. Each step function must behave the
    # same whether or not the other callbacks ran, so none of them may lean
    # on a best value that a different callback maintains.
    lr_best: float = field(default=math.inf, repr=False)
    es_best: float = field(default=math.inf, repr=False)

    def improved(self, val_loss: float, best: float) -> bool:
        return val_loss < best - self.min_delta


def model_checkpoint_step(state: CallbackState, val_loss: float, weights=None,
                          save_fn=None) -> bool:
    """Track the running-minimum epoch; persist on strict improvement only.

    weights may be a snapshot dict or a zero-argument callable producing one
    (evaluated only when an improvement actually happens). A save_fn failure
    is reported but does not halt training; the in-memory snapshot still
    updates so later restoration works.
    """
    state.epoch += 1
    if not state.improved(val_loss, state.best_val_loss):
        return False
    state.best_val_loss = val_loss
    state.best_epoch = state.epoch
    if weights is not None:
        snap = weights() if callable(weights) else weights
        state.best_weights = {k: np.array(v, copy=True) for k, v in snap.items()}
    if save_fn is not None:
        try:
            save_fn()
        except Exception as exc:
            print(f"warning: checkpoint persistence failed at epoch "
                  f"{state.epoch}: {exc}", file=sys.stderr)
            return False
    return True


def reduce_lr_on_plateau_step(state: CallbackState, val_loss: float,
                              factor: float = 0.5, patience: int = 5,
                              min_lr: float = 1e-6) -> float:
    if state.improved(val_loss, state.lr_best):
        state.lr_best = val_loss
        state.epochs_since_improve_lr = 0
        return state.current_lr
    state.epochs_since_improve_lr += 1
    if state.epochs_since_improve_lr >= patience:
        state.current_lr = max(state.current_lr * factor, min_lr)
        state.epochs_since_improve_lr = 0
    return state.current_lr


def early_stopping_step(state: CallbackState, val_loss: float,
                        patience: int = 10, weights=None) -> bool:
    """Returns True when training should stop. When given weights it records
    its own best snapshot, for use without the checkpoint callback."""
    if state.improved(val_loss, state.es_best):
        state.es_best = val_loss
        state.epochs_since_improve_es = 0
        if weights is not None:
            snap = weights() if callable(weights) else weights
            state.best_weights = {k: np.array(v, copy=True) for k, v in snap.items()}
        return False
    state.epochs_since_improve_es += 1
    if state.epochs_since_improve_es >= patience:
        state.stopped = True
    return state.stopped


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


def write_history_csv(rows: list[HistoryRow], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_loss,train_acc,val_loss,val_acc,lr\n")
        for r in rows:
            fh.write(f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},"
                     f"{r.val_loss:.6f},{r.val_acc:.6f},{r.lr:.10g}\n")


def evaluate(model: ModelGraph, loader, lambda_l2: float = 0.0) -> tuple[float, float]:
    """Mean loss (cross-entropy plus the L2 term, matching the train-side
    reported loss) and accuracy over one full pass, sample-weighted."""
    total_loss = 0.0
    total_correct = 0.0
    n = 0
    for x, y in loader.epoch(0):
        probs = model.forward(x, training=False)
        loss, _ = cce_loss(probs, y)
        b = x.shape[0]
        total_loss += loss * b
        total_correct += batch_accuracy(probs, y) * b
        n += b
    if n == 0:
        raise ValueError("evaluate saw an empty loader")
    penalty = l2_penalty(model, lambda_l2, accumulate=False)
    return total_loss / n + penalty, total_correct / n


def collect_predictions(model: ModelGraph, loader) -> tuple[np.ndarray, np.ndarray]:
    """(y_true, y_pred) class indices over one inference pass."""
    trues, preds = [], []
    for x, y in loader.epoch(0):
        probs = model.forward(x, training=False)
        trues.append(y.argmax(axis=1))
        preds.append(probs.argmax(axis=1))
    return np.concatenate(trues), np.concatenate(preds)


def run_training(model: ModelGraph, train_loader, val_loader, config: TrainConfig,
                 out_dir: str | None = None, save_fn=None, log=print,
                 ) -> tuple[ModelGraph, list[HistoryRow]]:
    """Train for config.epochs (or until early stop), validating each epoch.

    Artifacts under out_dir: history.csv (rewritten every epoch so aborts
    keep their curves) and best.ckpt via save_fn when provided. The returned
    model carries the best-epoch weights when early stopping fired with
    restore_best enabled.
    """
    optimizer = AdamW(config.initial_lr, config.beta1, config.beta2,
                      config.epsilon, config.weight_decay)
    state = CallbackState(current_lr=config.initial_lr, min_delta=config.min_delta)
    cb_save = (lambda: save_fn(model, optimizer, state)) if save_fn else None
    history: list[HistoryRow] = []
    history_path = os.path.join(out_dir, "history.csv") if out_dir else None

    def flush_history():
        if history_path:
            write_history_csv(history, history_path)

    try:
        for epoch in range(1, config.epochs + 1):
            optimizer.learning_rate = state.current_lr
            epoch_loss = 0.0
            epoch_correct = 0.0
            seen = 0
            drop_rng = Rng(mix64(config.seed, 0xD20, epoch))
            for bi, (x, y) in enumerate(train_loader.epoch(epoch)):
                probs = model.forward(x, training=True, rng=drop_rng)
                loss, dlogits = cce_loss(probs, y)
                if not math.isfinite(loss):
                    raise NumericError(
                        f"non-finite training loss {loss} at epoch {epoch}, "
                        f"batch {bi}"
                    )
                model.backward(dlogits, from_logits=True)
                penalty = l2_penalty(model, config.lambda_l2, accumulate=True)
                optimizer.step(model.trainable_params())
                b = x.shape[0]
                epoch_loss += (loss + penalty) * b
                epoch_correct += batch_accuracy(probs, y) * b
                seen += b
            train_loss = epoch_loss / seen
            train_acc = epoch_correct / seen
            val_loss, val_acc = evaluate(model, val_loader, config.lambda_l2)
            history.append(HistoryRow(epoch, train_loss, train_acc,
                                      val_loss, val_acc, state.current_lr))
            log(f"epoch {epoch}/{config.epochs} "
                f"loss {train_loss:.4f} acc {train_acc:.4f} "
                f"val_loss {val_loss:.4f} val_acc {val_acc:.4f} "
                f"lr {state.current_lr:.10g}")
            flush_history()

            model_checkpoint_step(state, val_loss, weights=model.snapshot_weights,
                                  save_fn=cb_save)
            reduce_lr_on_plateau_step(state, val_loss, config.lr_factor,
                                      config.lr_patience, config.min_lr)
            early_stopping_step(state, val_loss, config.es_patience)
            if state.stopped:
                log(f"early stopping at epoch {epoch}; best epoch "
                    f"{state.best_epoch} (val_loss {state.best_val_loss:.4f})")
                if config.restore_best and state.best_weights is not None:
                    model.restore_weights(state.best_weights)
                break
    finally:
        flush_history()
    return model, history
