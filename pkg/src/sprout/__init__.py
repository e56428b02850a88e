"""Parameter-efficient image classification: a MobileNet-v1 style backbone
with prefix freezing, a seeded augmentation and data pipeline, AdamW training
with plateau/early-stop callbacks, and bit-exact checkpointing.

Heavy convolution kernels run through an optional compiled extension with a
pure-NumPy fallback; see sprout.kernels.backend_name().
"""

__version__ = "0.1.0"

from .model import HeadSpec, ModelGraph, build_model, count_params, freeze_prefix
from .rng import Rng

__all__ = [
    "HeadSpec",
    "ModelGraph",
    "Rng",
    "build_model",
    "count_params",
    "freeze_prefix",
    "__version__",
]
