"""MobileNet-v1 style backbone with a custom classification head.

The architecture is a sequential graph with a fixed canonical enumeration:

* indices 0-4 (stem): input, zeropad(0,1,0,1), 3x3 stride-2 conv to 32*alpha
  channels, batchnorm, relu6;
* 13 depthwise-separable blocks. Block k contains a zeropad(0,1,0,1) layer
  only when k is in {2, 4, 6, 12}; its depthwise conv uses stride 2 exactly
  for those blocks (valid padding after the explicit pad) and stride 1 with
  symmetric (1,1,1,1) padding otherwise. Each block then runs
  [depthwise 3x3, bn, relu6, pointwise 1x1 conv, bn, relu6].
  Output channels per block: 64, 128, 128, 256, 256, 512, 512, 512, 512,
  512, 512, 1024, 1024 (times alpha);
* the backbone therefore has 5 + 9*6 + 4*7 = 87 layers (indices 0-86) at
  every alpha;
* head: global average pool, dense(256, relu, L2-tagged), dropout, dense(128,
  relu, L2-tagged), dropout, dense(num_classes, softmax).

Freezing the first 80 layers freezes the stem and blocks 1-12 (index 80 is
block 12's parameterless relu6), leaving block 13 and the head trainable.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .layers import (Activation, BatchNorm, Conv2D, Dense, DepthwiseConv2D,
                     Dropout, GlobalAvgPool, Input, Layer, ZeroPad2D)
from .rng import Rng
from .tensor import Tensor

BLOCK_CHANNELS = (64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024)
STRIDE2_BLOCKS = frozenset({2, 4, 6, 12})
VALID_ALPHAS = (0.25, 0.5, 0.75, 1.0)
BACKBONE_LAYERS = 87


@dataclass
class HeadSpec:
    """Classification head: two regularized relu dense layers with dropout."""

    units: tuple[int, int] = (256, 128)
    dropout_rate: float = 0.25


@dataclass
class ModelGraph:
    layers: list[Layer]
    input_shape: tuple[int, int, int]
    num_classes: int
    alpha: float
    backbone_len: int = BACKBONE_LAYERS
    dtype: object = np.float32
    head: HeadSpec = field(default_factory=HeadSpec)

    def forward(self, x: np.ndarray, training: bool = False,
                rng: Rng | None = None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, grad: np.ndarray, from_logits: bool = False) -> np.ndarray:
        """Backpropagate; from_logits means grad is already w.r.t. the final
        dense layer's pre-softmax logits (the fused cross-entropy path)."""
        last = self.layers[-1]
        if from_logits:
            if not (isinstance(last, Dense) and last.activation == "softmax"):
                raise ShapeError("from_logits requires a softmax dense output layer")
            grad = last.backward(grad, dy_is_preactivation=True)
            rest = self.layers[:-1]
        else:
            rest = self.layers
        for layer in reversed(rest):
            grad = layer.backward(grad)
        return grad

    # -- parameter access ---------------------------------------------------

    def named_params(self, trainable_only: bool = False):
        """Yield (name, Tensor) in enumeration order, params then buffers."""
        for layer in self.layers:
            if trainable_only and layer.frozen:
                continue
            for pname, t in layer.params.items():
                yield f"{layer.name}.{pname}", t
            if not trainable_only:
                for bname, t in layer.buffers.items():
                    yield f"{layer.name}.{bname}", t

    def trainable_params(self) -> list[tuple[str, Tensor]]:
        return list(self.named_params(trainable_only=True))

    def param_tensors(self) -> dict[str, Tensor]:
        return dict(self.named_params())

    def zero_grads(self) -> None:
        for _, t in self.named_params():
            t.zero_grad()

    def snapshot_weights(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_params()}

    def restore_weights(self, snapshot: dict[str, np.ndarray]) -> None:
        tensors = self.param_tensors()
        missing = set(tensors) - set(snapshot)
        if missing:
            raise KeyError(f"snapshot missing tensors: {sorted(missing)[:3]}")
        for name, t in tensors.items():
            t.data[...] = snapshot[name]

    def regularized_kernels(self) -> list[tuple[str, Tensor]]:
        out = []
        for layer in self.layers:
            if isinstance(layer, Dense) and layer.regularized:
                out.append((f"{layer.name}.kernel", layer.params["kernel"]))
        return out

    # -- enumeration and accounting ------------------------------------------

    def enumeration(self) -> list[dict]:
        """One row per layer: index, kind, name, hyper and parameter counts."""
        rows = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape) if layer.kind != "input" else shape
            tr, non = layer.param_counts()
            rows.append({
                "index": layer.index,
                "kind": layer.kind,
                "name": layer.name,
                "hyper": layer.hyper(),
                "out_shape": shape,
                "frozen": layer.frozen,
                "trainable": tr,
                "non_trainable": non,
            })
        return rows

    def enumeration_csv(self) -> str:
        buf = io.StringIO()
        buf.write("index,kind,name,hyper,out_shape,frozen,trainable,non_trainable\n")
        for r in self.enumeration():
            hyper = ";".join(f"{k}={v}" for k, v in sorted(r["hyper"].items()))
            shape = "x".join(str(s) for s in r["out_shape"])
            buf.write(f"{r['index']},{r['kind']},{r['name']},{hyper},{shape},"
                      f"{int(r['frozen'])},{r['trainable']},{r['non_trainable']}\n")
        return buf.getvalue()

    def architecture_checksum(self) -> str:
        """Digest of the enumeration minus freeze flags; identifies the
        architecture for checkpoint compatibility checks."""
        rows = []
        for r in self.enumeration():
            hyper = ";".join(f"{k}={v}" for k, v in sorted(r["hyper"].items()))
            rows.append(f"{r['index']},{r['kind']},{r['name']},{hyper}")
        return hashlib.sha256("\n".join(rows).encode()).hexdigest()


def count_params(model: ModelGraph) -> tuple[int, int, int]:
    """(total, trainable, non_trainable) over the whole graph."""
    trainable = 0
    non_trainable = 0
    for layer in model.layers:
        tr, non = layer.param_counts()
        trainable += tr
        non_trainable += non
    return trainable + non_trainable, trainable, non_trainable


def freeze_prefix(model: ModelGraph, n: int) -> ModelGraph:
    """Freeze layers with index < n; propagation through them is unaffected."""
    if not 0 <= n <= model.backbone_len:
        raise ValueError(
            f"freeze_prefix must be in [0, {model.backbone_len}], got {n}"
        )
    for layer in model.layers:
        layer.frozen = layer.index < n
    return model


def scaled(channels: int, alpha: float) -> int:
    return int(channels * alpha)


def build_model(alpha: float = 1.0, input_size: int = 224, num_classes: int = 7,
                freeze_n: int = 80, head: HeadSpec | None = None,
                seed: int = 42, dtype=np.float32) -> ModelGraph:
    """Construct the full graph under the canonical enumeration."""
    if alpha not in VALID_ALPHAS:
        raise ValueError(f"alpha must be one of {VALID_ALPHAS}, got {alpha}")
    if input_size % 32 != 0 or input_size <= 0:
        raise ValueError(f"input_size must be a positive multiple of 32, got {input_size}")
    head = head or HeadSpec()
    rng = Rng(seed, stream=101)
    layers: list[Layer] = []

    def add(layer: Layer) -> Layer:
        layer.index = len(layers)
        layers.append(layer)
        return layer

    in_shape = (input_size, input_size, 3)
    stem_ch = scaled(32, alpha)
    add(Input("input", in_shape))
    add(ZeroPad2D("stem.pad", (0, 1, 0, 1)))
    add(Conv2D("stem.conv", 3, stem_ch, 3, 2, (0, 0, 0, 0), rng, dtype))
    add(BatchNorm("stem.bn", stem_ch, dtype=dtype))
    add(Activation("stem.relu", "relu6"))

    ch = stem_ch
    for k, out_base in enumerate(BLOCK_CHANNELS, start=1):
        out_ch = scaled(out_base, alpha)
        stride2 = k in STRIDE2_BLOCKS
        if stride2:
            add(ZeroPad2D(f"b{k}.pad", (0, 1, 0, 1)))
        dw_pad = (0, 0, 0, 0) if stride2 else (1, 1, 1, 1)
        add(DepthwiseConv2D(f"b{k}.dw", ch, 3, 2 if stride2 else 1, dw_pad, rng, dtype))
        add(BatchNorm(f"b{k}.dw.bn", ch, dtype=dtype))
        add(Activation(f"b{k}.dw.relu", "relu6"))
        add(Conv2D(f"b{k}.pw", ch, out_ch, 1, 1, (0, 0, 0, 0), rng, dtype))
        add(BatchNorm(f"b{k}.pw.bn", out_ch, dtype=dtype))
        add(Activation(f"b{k}.pw.relu", "relu6"))
        ch = out_ch

    backbone_len = len(layers)
    if backbone_len != BACKBONE_LAYERS:
        raise AssertionError(f"backbone enumeration drifted: {backbone_len} layers")

    add(GlobalAvgPool("head.gap"))
    u1, u2 = head.units
    add(Dense("head.dense1", ch, u1, rng, activation="relu", regularized=True,
              dtype=dtype))
    add(Dropout("head.drop1", head.dropout_rate))
    add(Dense("head.dense2", u1, u2, rng, activation="relu", regularized=True,
              dtype=dtype))
    add(Dropout("head.drop2", head.dropout_rate))
    add(Dense("head.out", u2, num_classes, rng, activation="softmax", dtype=dtype))

    model = ModelGraph(layers=layers, input_shape=in_shape, num_classes=num_classes,
                       alpha=alpha, backbone_len=backbone_len, dtype=dtype, head=head)
    _validate_shapes(model)
    freeze_prefix(model, freeze_n)
    return model


def _validate_shapes(model: ModelGraph) -> None:
    shape = model.input_shape
    for layer in model.layers:
        if layer.kind == "input":
            continue
        shape = layer.out_shape(shape)
    if shape != (model.num_classes,):
        raise ShapeError(f"output shape {shape} != ({model.num_classes},)")
