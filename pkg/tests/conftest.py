import os

import numpy as np
import pytest
from PIL import Image

from sprout import kernels
from sprout.rng import Rng, mix64


def pytest_report_header(config):
    return f"sprout kernels backend: {kernels.backend_name()} (ext built: {kernels.have_ext()})"


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run a test once per compiled/pure backend, restoring the default after."""
    previous = kernels.backend_name()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(previous)


def make_image_tree(root, class_names, per_class, size=(24, 20), seed=5):
    """Synthetic class-per-directory dataset: each class gets a distinct base
    pattern with small per-image jitter, so tiny models can separate them."""
    rng = np.random.default_rng(seed)
    for ci, cname in enumerate(class_names):
        cdir = os.path.join(root, cname)
        os.makedirs(cdir, exist_ok=True)
        base = rng.integers(30, 226, (size[1], size[0], 3))
        for i in range(per_class):
            jitter = rng.integers(-25, 26, base.shape)
            arr = np.clip(base + jitter, 0, 255).astype(np.uint8)
            Image.fromarray(arr).save(os.path.join(cdir, f"img_{i:03d}.png"))


@pytest.fixture
def image_tree(tmp_path):
    names = ["bacterial_blight", "curl_virus", "healthy"]
    make_image_tree(str(tmp_path / "data"), names, 12)
    return str(tmp_path / "data"), names


def uniform_array(seed, shape, lo=-1.0, hi=1.0):
    n = int(np.prod(shape))
    return Rng(mix64(0xA77A, seed)).fill_uniform(n, lo, hi).reshape(shape)
