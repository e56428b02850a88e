"""Directory-tree ingestion, deterministic stratified splitting, batch serving.

A dataset is one subdirectory per class containing JPEG/PNG files. Scanning
is deterministic (classes lexicographic, paths sorted within class), the
split shuffles each class with its own seeded generator, and batch order
plus per-image augmentation draws derive from (seed, epoch, entry ordinal),
never from thread scheduling, so any level of prefetch parallelism produces
identical tensors.
"""

from __future__ import annotations

import csv
import os
import queue
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .augment import AugmentPolicy, apply_affine, rescale, sample_augment_params
from .errors import DatasetError
from .rng import Rng, mix64

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")
SUBSETS = ("train", "val", "test")


@dataclass
class Manifest:
    entries: list[tuple[str, int]]
    class_names: list[str]
    root: str

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for _, ci in self.entries:
            counts[ci] += 1
        return counts

    def resolve(self, relpath: str) -> str:
        return os.path.join(self.root, relpath)


@dataclass
class SplitSpec:
    seed: int = 42
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    stratified: bool = True

    def __post_init__(self):
        if any(r <= 0 for r in self.ratios):
            raise DatasetError(f"split ratios must be positive, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise DatasetError(f"split ratios must sum to 1, got {self.ratios}")


def scan_dataset(root: str, lenient: bool = False) -> Manifest:
    """Build a manifest from a class-per-directory tree.

    Every file's header is verified up front so undecodable files fail here
    with their path instead of mid-epoch; lenient mode skips them with a
    warning on stderr.
    """
    if not os.path.isdir(root):
        raise DatasetError(f"dataset root is not a directory: {root}")
    class_names = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not class_names:
        raise DatasetError(f"no class directories under {root}")
    entries: list[tuple[str, int]] = []
    for ci, cname in enumerate(class_names):
        cdir = os.path.join(root, cname)
        files = sorted(
            f for f in os.listdir(cdir)
            if f.lower().endswith(IMAGE_EXTENSIONS)
            and os.path.isfile(os.path.join(cdir, f))
        )
        kept = 0
        for fname in files:
            rel = f"{cname}/{fname}"
            full = os.path.join(cdir, fname)
            try:
                with Image.open(full) as im:
                    im.verify()
            except Exception as exc:
                if lenient:
                    print(f"warning: skipping undecodable {rel}: {exc}",
                          file=sys.stderr)
                    continue
                raise DatasetError(f"undecodable image {rel}: {exc}") from exc
            entries.append((rel, ci))
            kept += 1
        if kept == 0:
            raise DatasetError(f"class directory {cname!r} has no usable images")
    return Manifest(entries, class_names, root)


def _largest_remainder(n: int, ratios) -> list[int]:
    quotas = [n * r for r in ratios]
    base = [int(q) for q in quotas]
    short = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def split(manifest: Manifest, spec: SplitSpec) -> tuple[Manifest, Manifest, Manifest]:
    """Deterministic 80/10/10 partition; subsets come back path-sorted so the
    in-memory result and a split.csv round-trip are identical."""
    groups: list[list[tuple[str, int]]]
    if spec.stratified:
        groups = [[] for _ in manifest.class_names]
        for entry in manifest.entries:
            groups[entry[1]].append(entry)
    else:
        groups = [list(manifest.entries)]
    out: list[list[tuple[str, int]]] = [[], [], []]
    for gi, group in enumerate(groups):
        group = sorted(group)
        salt = gi if spec.stratified else 0
        Rng(spec.seed ^ salt).shuffle(group)
        counts = _largest_remainder(len(group), spec.ratios)
        if spec.stratified and any(c == 0 for c in counts):
            raise DatasetError(
                f"class {manifest.class_names[gi]!r} has only {len(group)} "
                f"entries; cannot fill every subset at ratios {spec.ratios}"
            )
        cursor = 0
        for si, c in enumerate(counts):
            out[si].extend(group[cursor : cursor + c])
            cursor += c
    return tuple(
        Manifest(sorted(part), manifest.class_names, manifest.root) for part in out
    )


def write_split_csv(path: str, train: Manifest, val: Manifest, test: Manifest) -> None:
    rows = []
    for subset, m in zip(SUBSETS, (train, val, test)):
        for rel, ci in m.entries:
            rows.append((rel, m.class_names[ci], subset))
    rows.sort()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "class", "subset"])
        w.writerows(rows)


def read_split_csv(path: str, root: str) -> tuple[Manifest, Manifest, Manifest]:
    by_subset: dict[str, list[tuple[str, str]]] = {s: [] for s in SUBSETS}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "class", "subset"]:
            raise DatasetError(f"{path}: unexpected header {header}")
        for row in reader:
            if len(row) != 3:
                raise DatasetError(f"{path}: malformed row {row}")
            rel, cname, subset = row
            if subset not in by_subset:
                raise DatasetError(f"{path}: unknown subset {subset!r}")
            by_subset[subset].append((rel, cname))
    class_names = sorted({c for rows in by_subset.values() for _, c in rows})
    index = {c: i for i, c in enumerate(class_names)}
    out = []
    for subset in SUBSETS:
        entries = sorted((rel, index[c]) for rel, c in by_subset[subset])
        out.append(Manifest(entries, class_names, root))
    return tuple(out)


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DatasetError(f"label out of range [0, {k})")
    out = np.zeros((labels.size, k), dtype=np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out


def load_image(path: str, size: int) -> np.ndarray:
    """Decode to RGB, bilinear-resize to size x size, return float32 0..255."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
            return np.asarray(im, dtype=np.float32)
    except DatasetError:
        raise
    except Exception as exc:
        raise DatasetError(f"failed to decode {path}: {exc}") from exc


def _entry_seed(seed: int, epoch: int, ordinal: int) -> int:
    return mix64(seed, epoch, ordinal)


def default_threads() -> int:
    raw = os.environ.get("SPROUT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise DatasetError(f"SPROUT_THREADS must be an integer, got {raw!r}")


class BatchLoader:
    """Serves (images, one-hot) batches for a manifest.

    Epoch ordering comes from a per-epoch seeded shuffle; augmentation draws
    come from per-(epoch, ordinal) generators where the ordinal indexes the
    path-sorted manifest, so worker count and arrival order cannot change
    the produced tensors. The final short batch is kept.
    """

    def __init__(self, manifest: Manifest, batch_size: int, image_size: int = 224,
                 shuffle: bool = False, augment: AugmentPolicy | None = None,
                 seed: int = 42, threads: int | None = None, prefetch: int = 2):
        if batch_size < 1:
            raise DatasetError(f"batch_size must be >= 1, got {batch_size}")
        if len(manifest) == 0:
            raise DatasetError("cannot iterate an empty manifest")
        self.manifest = manifest
        self.batch_size = batch_size
        self.image_size = image_size
        self.shuffle = shuffle
        self.augment = augment
        self.seed = seed
        self.threads = default_threads() if threads is None else max(1, threads)
        self.prefetch = max(1, prefetch)

    def __len__(self) -> int:
        return -(-len(self.manifest) // self.batch_size)

    def _epoch_order(self, epoch: int) -> list[int]:
        order = list(range(len(self.manifest)))
        if self.shuffle:
            Rng(_entry_seed(self.seed, epoch, 0xC0FFEE)).shuffle(order)
        return order

    def _prepare(self, ordinal: int, epoch: int) -> tuple[np.ndarray, int]:
        rel, ci = self.manifest.entries[ordinal]
        img = load_image(self.manifest.resolve(rel), self.image_size)
        if self.augment is not None:
            rng = Rng(_entry_seed(self.seed, epoch, ordinal))
            params = sample_augment_params(rng, self.augment, img.shape[:2])
            img = apply_affine(img, params, self.augment.fill_mode)
        return rescale(img), ci

    def _assemble(self, ordinals: list[int], epoch: int,
                  pool: ThreadPoolExecutor | None) -> tuple[np.ndarray, np.ndarray]:
        if pool is not None:
            prepared = list(pool.map(lambda o: self._prepare(o, epoch), ordinals))
        else:
            prepared = [self._prepare(o, epoch) for o in ordinals]
        images = np.stack([p[0] for p in prepared])
        labels = one_hot([p[1] for p in prepared], self.manifest.num_classes)
        return images, labels

    def epoch(self, epoch: int = 0):
        """Yield every batch of one epoch, in order."""
        order = self._epoch_order(epoch)
        chunks = [order[i : i + self.batch_size]
                  for i in range(0, len(order), self.batch_size)]
        if self.threads <= 1:
            for chunk in chunks:
                yield self._assemble(chunk, epoch, None)
            return
        yield from self._pipelined(chunks, epoch)

    def _pipelined(self, chunks, epoch):
        q: queue.Queue = queue.Queue(maxsize=self.prefetch)
        stop = threading.Event()

        def produce():
            try:
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    for chunk in chunks:
                        if stop.is_set():
                            return
                        q.put(("batch", self._assemble(chunk, epoch, pool)))
            except BaseException as exc:  # surfaced on the consumer side
                q.put(("error", exc))
                return
            q.put(("done", None))

        worker = threading.Thread(target=produce, daemon=True)
        worker.start()
        try:
            while True:
                kind, payload = q.get()
                if kind == "batch":
                    yield payload
                elif kind == "error":
                    raise payload
                else:
                    return
        finally:
            stop.set()
            while True:
                try:
                    q.get_nowait()
                except queue.Empty:
                    break
