"""Shared fixtures: tiny images and labeled directory trees."""

import numpy as np
import pytest

from freqdp.image_io import RgbImage, save_image
from freqdp.synthetic import make_grating_images, make_smooth_images


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_image(rng):
    """A random 16x16 RGB image."""
    return RgbImage(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))


@pytest.fixture
def smooth_images():
    return make_smooth_images(12, size=16, seed=3)


@pytest.fixture
def labeled_tree(tmp_path):
    """Class-per-subdirectory PNG tree of small grating images."""
    imgs, labels = make_grating_images(6, n_classes=2, size=8, seed=1)
    root = tmp_path / "raw"
    for i, (img, lab) in enumerate(zip(imgs, labels)):
        d = root / f"class_{lab}"
        d.mkdir(parents=True, exist_ok=True)
        save_image(img, d / f"img_{i:03d}.png")
    return root
