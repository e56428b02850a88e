"""Single-file tensor archive: bit-exact save/load of model and optimizer
state, plus pretrained-backbone import with a shipped name map.

Layout (see docs/FORMAT.md): magic ``SPRT1``, little-endian u64 header
length, canonical UTF-8 JSON header (sorted keys, no whitespace), then the
raw little-endian float32 payload. Tensors are laid out in sorted-name
order, so identical contents always produce identical bytes; writes go
through a temp file and os.replace so a crash never leaves a partial
archive at the destination.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError

MAGIC = b"SPRT1"
FORMAT_VERSION = "1"


@dataclass
class TensorArchive:
    tensors: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)


def _canonical_header(tensors: dict[str, np.ndarray], metadata: dict[str, str]) -> tuple[bytes, list[str]]:
    names = sorted(tensors)
    entries = {}
    offset = 0
    for name in names:
        arr = tensors[name]
        length = 4 * arr.size
        entries[name] = {"dtype": "f32", "shape": list(arr.shape),
                         "offset": offset, "length": length}
        offset += length
    header = {"metadata": dict(metadata), "tensors": entries}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return blob, names


def write_archive(archive: TensorArchive, path: str) -> None:
    for name, arr in archive.tensors.items():
        if arr.dtype != np.float32:
            raise CheckpointError(
                f"tensor {name!r} has dtype {arr.dtype}; archives hold float32 only"
            )
    for key, val in archive.metadata.items():
        if not isinstance(val, str):
            raise CheckpointError(f"metadata value for {key!r} must be a string")
    blob, names = _canonical_header(archive.tensors, archive.metadata)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".sprt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            for name in names:
                fh.write(np.ascontiguousarray(archive.tensors[name], dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_archive(path: str) -> TensorArchive:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise CheckpointError(f"{path}: bad magic {magic!r}")
            raw_len = fh.read(8)
            if len(raw_len) != 8:
                raise CheckpointError(f"{path}: truncated header length")
            hlen = int.from_bytes(raw_len, "little")
            blob = fh.read(hlen)
            if len(blob) != hlen:
                raise CheckpointError(f"{path}: truncated header")
            header = json.loads(blob.decode("utf-8"))
            payload = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read archive {path}: {exc}") from exc
    tensors = {}
    for name, ent in header.get("tensors", {}).items():
        if ent.get("dtype") != "f32":
            raise CheckpointError(f"{path}: tensor {name!r} has unsupported dtype")
        off, length = ent["offset"], ent["length"]
        shape = tuple(ent["shape"])
        if length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{path}: tensor {name!r} length/shape disagree")
        if off < 0 or off + length > len(payload):
            raise CheckpointError(f"{path}: tensor {name!r} outside payload")
        arr = np.frombuffer(payload, dtype="<f4", count=length // 4, offset=off)
        tensors[name] = arr.reshape(shape).copy()
    return TensorArchive(tensors, dict(header.get("metadata", {})))


def save_checkpoint(model, path: str, optimizer=None,
                    metadata: dict[str, str] | None = None) -> None:
    """Persist every model tensor (params and buffers) under its canonical
    name, plus optimizer moments when given."""
    tensors = {name: t.data for name, t in model.named_params()}
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
        step = str(optimizer.step_count)
    else:
        step = "0"
    meta = {
        "format_version": FORMAT_VERSION,
        "enum_checksum": model.architecture_checksum(),
        "step": step,
    }
    if metadata:
        meta.update(metadata)
    write_archive(TensorArchive(tensors, meta), path)


def load_checkpoint(path: str, model, optimizer=None) -> dict[str, str]:
    """Validate the archive against the model, then copy weights in.

    Every model tensor must be present with a matching shape; nothing is
    mutated until all checks pass. Returns the archive metadata."""
    archive = read_archive(path)
    meta = archive.metadata
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version!r}, expected {FORMAT_VERSION!r}"
        )
    checksum = meta.get("enum_checksum")
    if checksum and checksum != model.architecture_checksum():
        raise CheckpointError(
            f"{path}: architecture checksum mismatch (archive {checksum[:12]}..., "
            f"model {model.architecture_checksum()[:12]}...)"
        )
    targets = model.param_tensors()
    for name, tensor in targets.items():
        arr = archive.tensors.get(name)
        if arr is None:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if arr.shape != tensor.shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {arr.shape}, "
                f"model expects {tensor.shape}"
            )
    for name, tensor in targets.items():
        tensor.data[...] = archive.tensors[name]
    if optimizer is not None:
        moments = {k: v for k, v in archive.tensors.items() if k.startswith("optim.")}
        optimizer.load_state_tensors(moments)
        optimizer.step_count = int(meta.get("step", "0"))
    return meta


@dataclass
class ImportResult:
    imported: list[str]
    ignored: list[str]
    missing: list[str]


def default_import_map(model) -> dict[str, str]:
    """Keras-style MobileNet export names -> canonical names.

    Covers the stem and all 13 blocks; depthwise kernels shed their
    trailing unit axis on import."""
    mapping = {
        "conv1/kernel": "stem.conv.kernel",
    }
    bn_leaves = {"gamma": "gamma", "beta": "beta",
                 "moving_mean": "moving_mean", "moving_variance": "moving_var"}
    for leaf, ours in bn_leaves.items():
        mapping[f"conv1_bn/{leaf}"] = f"stem.bn.{ours}"
    for k in range(1, 14):
        mapping[f"conv_dw_{k}/depthwise_kernel"] = f"b{k}.dw.kernel"
        mapping[f"conv_pw_{k}/kernel"] = f"b{k}.pw.kernel"
        for leaf, ours in bn_leaves.items():
            mapping[f"conv_dw_{k}_bn/{leaf}"] = f"b{k}.dw.bn.{ours}"
            mapping[f"conv_pw_{k}_bn/{leaf}"] = f"b{k}.pw.bn.{ours}"
    return mapping


def _backbone_tensor_names(model) -> set[str]:
    names = set()
    for layer in model.layers[: model.backbone_len]:
        for pname in layer.params:
            names.add(f"{layer.name}.{pname}")
        for bname in layer.buffers:
            names.add(f"{layer.name}.{bname}")
    return names


def import_backbone(source, model, name_map: dict[str, str] | None = None) -> ImportResult:
    """Replace backbone weights from an archive; the head is never touched.

    Archive tensors already carrying canonical backbone names import
    directly, Keras-style names go through the map, anything else lands in
    the ignored list. A mapped tensor with an incompatible shape (after the
    trailing-unit-axis squeeze) is an error naming both shapes."""
    archive = source if isinstance(source, TensorArchive) else read_archive(source)
    name_map = default_import_map(model) if name_map is None else name_map
    backbone = _backbone_tensor_names(model)
    targets = model.param_tensors()
    staged: dict[str, np.ndarray] = {}
    ignored: list[str] = []
    for src_name, arr in archive.tensors.items():
        dst = src_name if src_name in backbone else name_map.get(src_name)
        if dst is None or dst not in backbone:
            ignored.append(src_name)
            continue
        tensor = targets[dst]
        if arr.shape != tensor.shape:
            if arr.shape == tensor.shape + (1,):
                arr = arr.reshape(tensor.shape)
            else:
                raise CheckpointError(
                    f"import tensor {src_name!r} -> {dst!r}: shape {arr.shape} "
                    f"does not fit {tensor.shape}"
                )
        staged[dst] = arr
    for dst, arr in staged.items():
        targets[dst].data[...] = arr
    missing = sorted(backbone - set(staged))
    return ImportResult(sorted(staged), sorted(ignored), missing)
