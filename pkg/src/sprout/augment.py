"""Seeded affine augmentation: rotation, shift, shear, zoom, horizontal flip,
plus 1/255 rescaling.

Geometry convention, fixed for determinism: the flip (when drawn) reverses
columns first; the remaining transforms act as a single sampling map about
the image center,

    src = C + R(theta) @ Sh(shear) @ diag(zx, zy) @ (out - C) + (tx, ty)

on (x=column, y=row) coordinates with R = [[cos, -sin], [sin, cos]] and
Sh = [[1, -sin s], [0, cos s]]. Sampling is nearest-neighbor (np.rint) with
nearest-edge fill (index clipping), so augmented pixel values are always a
subset of the input's values. Angles are degrees; shear range defaults to
degrees as well (a near no-op at 0.2) but the unit is configurable since
radians are a common alternative reading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import Rng


@dataclass
class AugmentPolicy:
    rescale: float = 1.0 / 255.0
    rotation_range_deg: float = 20.0
    width_shift_frac: float = 0.2
    height_shift_frac: float = 0.2
    shear_range: float = 0.2
    shear_unit: str = "deg"
    zoom_range: float = 0.2
    horizontal_flip: bool = True
    fill_mode: str = "nearest"

    def __post_init__(self):
        for fieldname in ("rotation_range_deg", "width_shift_frac",
                          "height_shift_frac", "shear_range", "zoom_range"):
            if getattr(self, fieldname) < 0:
                raise ConfigError(f"{fieldname} must be non-negative")
        if not self.zoom_range < 1:
            raise ConfigError("zoom_range must be < 1")
        if self.shear_unit not in ("deg", "rad"):
            raise ConfigError(f"shear_unit must be deg or rad, got {self.shear_unit!r}")
        if self.fill_mode != "nearest":
            raise ConfigError(f"only fill_mode=nearest is supported, got {self.fill_mode!r}")

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        """Geometric identity: evaluation paths rescale only."""
        return cls(rotation_range_deg=0.0, width_shift_frac=0.0,
                   height_shift_frac=0.0, shear_range=0.0, zoom_range=0.0,
                   horizontal_flip=False)


@dataclass
class AffineParams:
    theta_deg: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    shear_deg: float = 0.0
    zx: float = 1.0
    zy: float = 1.0
    flip: bool = False


def sample_augment_params(rng: Rng, policy: AugmentPolicy,
                          image_dims: tuple[int, int]) -> AffineParams:
    """Draw order is fixed (theta, tx, ty, shear, zx, zy, flip) so a given
    rng state always yields the same parameters."""
    h, w = image_dims
    theta = rng.uniform(-policy.rotation_range_deg, policy.rotation_range_deg)
    tx = rng.uniform(-policy.width_shift_frac * w, policy.width_shift_frac * w)
    ty = rng.uniform(-policy.height_shift_frac * h, policy.height_shift_frac * h)
    shear = rng.uniform(-policy.shear_range, policy.shear_range)
    if policy.shear_unit == "rad":
        shear = math.degrees(shear)
    zx = rng.uniform(1.0 - policy.zoom_range, 1.0 + policy.zoom_range)
    zy = rng.uniform(1.0 - policy.zoom_range, 1.0 + policy.zoom_range)
    flip = rng.coin() if policy.horizontal_flip else False
    return AffineParams(theta, tx, ty, shear, zx, zy, flip)


def apply_affine(image: np.ndarray, params: AffineParams,
                 fill_mode: str = "nearest") -> np.ndarray:
    if fill_mode != "nearest":
        raise ConfigError(f"only fill_mode=nearest is supported, got {fill_mode!r}")
    img = np.asarray(image)
    if img.ndim not in (2, 3):
        raise ConfigError(f"expected HxW or HxWxC image, got shape {img.shape}")
    if params.flip:
        img = img[:, ::-1]
    h, w = img.shape[:2]
    th = math.radians(params.theta_deg)
    sh = math.radians(params.shear_deg)
    rot = np.array([[math.cos(th), -math.sin(th)],
                    [math.sin(th), math.cos(th)]])
    shear = np.array([[1.0, -math.sin(sh)],
                      [0.0, math.cos(sh)]])
    zoom = np.array([[params.zx, 0.0], [0.0, params.zy]])
    a = rot @ shear @ zoom
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    vx, vy = xs - cx, ys - cy
    sx = a[0, 0] * vx + a[0, 1] * vy + cx + params.tx
    sy = a[1, 0] * vx + a[1, 1] * vy + cy + params.ty
    ix = np.clip(np.rint(sx).astype(np.intp), 0, w - 1)
    iy = np.clip(np.rint(sy).astype(np.intp), 0, h - 1)
    return np.ascontiguousarray(img[iy, ix])


def rescale(image: np.ndarray, denom: float = 255.0) -> np.ndarray:
    """Map [0, 255] to [0, 1]; division keeps 255 -> 1.0 exact in float32."""
    return np.asarray(image, dtype=np.float32) / np.float32(denom)


def augment_image(image: np.ndarray, rng: Rng, policy: AugmentPolicy) -> np.ndarray:
    """Full train-path pipeline for one decoded image: affine then rescale."""
    params = sample_augment_params(rng, policy, image.shape[:2])
    return rescale(apply_affine(image, params, policy.fill_mode))
