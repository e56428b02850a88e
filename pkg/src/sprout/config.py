"""Flat key=value configuration with defaults matching the training recipe.

A config file is plain text: one ``key = value`` per line, ``#`` starts a
comment, blank lines ignored. CLI flags override file values which override
defaults; the effective merged config prints back out in the same format so
an experiment's exact settings can be committed next to its results.
Float values accept plain decimals or fractions like ``1/4``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .augment import AugmentPolicy
from .dataset import SplitSpec, default_threads
from .errors import ConfigError
from .trainer import TrainConfig

# key -> (type tag, default); insertion order is the documented order.
SCHEMA: dict[str, tuple[str, object]] = {
    "data_dir": ("str", ""),
    "out_dir": ("str", "out"),
    "seed": ("int", 42),
    "deterministic": ("bool", True),
    "threads": ("int", 0),            # 0 = honor SPROUT_THREADS
    "alpha": ("float", 1.0),
    "image_size": ("int", 224),
    "num_classes": ("int", 0),        # 0 = infer from the dataset
    "freeze_prefix": ("int", 80),
    "epochs": ("int", 40),
    "batch_size": ("int", 32),
    "initial_lr": ("float", 0.001),
    "lambda_l2": ("float", 0.01),
    "weight_decay": ("float", 0.004),
    "beta1": ("float", 0.9),
    "beta2": ("float", 0.999),
    "epsilon": ("float", 1e-7),
    "es_patience": ("int", 10),
    "lr_patience": ("int", 5),
    "lr_factor": ("float", 0.5),
    "min_lr": ("float", 1e-6),
    "restore_best": ("bool", True),
    "min_delta": ("float", 0.0),
    "train_ratio": ("float", 0.8),
    "val_ratio": ("float", 0.1),
    "test_ratio": ("float", 0.1),
    "stratified": ("bool", True),
    "rotation_range": ("float", 20.0),
    "width_shift": ("float", 0.2),
    "height_shift": ("float", 0.2),
    "shear_range": ("float", 0.2),
    "shear_unit": ("str", "deg"),
    "zoom_range": ("float", 0.2),
    "horizontal_flip": ("bool", True),
    "fill_mode": ("str", "nearest"),
}


def parse_value(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    tag = SCHEMA[key][0]
    raw = raw.strip()
    try:
        if tag == "str":
            return raw
        if tag == "int":
            return int(raw)
        if tag == "float":
            if "/" in raw:
                num, den = raw.split("/", 1)
                return float(num) / float(den)
            return float(raw)
        if tag == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {tag})") from exc
    raise AssertionError(f"unhandled type tag {tag}")


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


@dataclass
class Config:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key)

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = value

    def merge_file(self, path: str) -> None:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {text!r}")
            key, raw = (part.strip() for part in text.split("=", 1))
            try:
                self.values[key] = parse_value(key, raw)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc

    def merge_overrides(self, overrides: dict) -> None:
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(value, str):
                value = parse_value(key, value)
            self.values[key] = value

    def dump(self) -> str:
        return "".join(f"{k} = {format_value(self.values[k])}\n" for k in SCHEMA)

    # -- typed views ----------------------------------------------------------

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            initial_lr=self.initial_lr, image_size=self.image_size,
            lambda_l2=self.lambda_l2, weight_decay=self.weight_decay,
            beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon,
            es_patience=self.es_patience, lr_patience=self.lr_patience,
            lr_factor=self.lr_factor, min_lr=self.min_lr,
            restore_best=self.restore_best, min_delta=self.min_delta,
            seed=self.seed,
        )

    def augment_policy(self) -> AugmentPolicy:
        return AugmentPolicy(
            rotation_range_deg=self.rotation_range,
            width_shift_frac=self.width_shift,
            height_shift_frac=self.height_shift,
            shear_range=self.shear_range, shear_unit=self.shear_unit,
            zoom_range=self.zoom_range, horizontal_flip=self.horizontal_flip,
            fill_mode=self.fill_mode,
        )

    def split_spec(self) -> SplitSpec:
        return SplitSpec(
            seed=self.seed,
            ratios=(self.train_ratio, self.val_ratio, self.test_ratio),
            stratified=self.stratified,
        )

    def loader_threads(self) -> int:
        if self.deterministic:
            return 1
        if self.threads > 0:
            return self.threads
        return default_threads()
