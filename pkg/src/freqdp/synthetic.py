"""Synthetic benchmark data: informative-coordinates tensors for the
budget learner and small procedurally generated images for calibration
and attack experiments.
"""

from __future__ import annotations

import numpy as np

from .image_io import RgbImage


def make_informative_dataset(
    n_per_class: int,
    n_coords: int = 32,
    n_classes: int = 2,
    n_informative: int = 5,
    seed: int = 0,
):
    """Labeled tensors where only a few coordinates carry class signal.

    Classes are binary codes spread over `n_informative` coordinates.
    Each informative coordinate holds +/-1 (the coded bit) plus uniform
    within-class spread that grows with the coordinate index, so the
    first coordinate of each bit is the most discriminative; all other
    coordinates are pure uniform noise on [-1, 1]. A budget learner
    should concentrate budget on the low-spread informative coordinates.

    Returns (tensors (N, n_coords), labels (N,)).
    """
    if n_classes < 2 or n_informative < 1 or n_coords < n_informative:
        raise ValueError("bad dataset geometry")
    n_bits = max(1, int(np.ceil(np.log2(n_classes))))
    if n_informative < n_bits:
        raise ValueError("need at least one informative coordinate per bit")
    rng = np.random.default_rng(seed)

    n = n_per_class * n_classes
    labels = np.repeat(np.arange(n_classes), n_per_class)
    x = rng.uniform(-1.0, 1.0, size=(n, n_coords))

    # coordinate j carries bit (j % n_bits); spread widens with rank
    for j in range(n_informative):
        bit = j % n_bits
        rank = j // n_bits
        spread = 0.75 * rank
        signs = np.where((labels >> bit) & 1, 1.0, -1.0)
        x[:, j] = signs + rng.uniform(-spread, spread, size=n)
    perm = rng.permutation(n)
    return x[perm].astype(np.float64), labels[perm]


def informative_coordinates(n_classes: int = 2, n_informative: int = 5):
    """Indices of the signal-bearing coordinates of the dataset above."""
    return list(range(n_informative))


def _blur(field: np.ndarray, passes: int = 4) -> np.ndarray:
    """Cheap separable smoothing by repeated 3-tap averaging."""
    for _ in range(passes):
        field = (
            field
            + np.roll(field, 1, axis=0) + np.roll(field, -1, axis=0)
            + np.roll(field, 1, axis=1) + np.roll(field, -1, axis=1)
        ) / 5.0
    return field


def make_smooth_images(count: int, size: int = 16, seed: int = 0):
    """Smooth natural-looking test images: blurred random fields with a
    random ramp, mapped into a per-image random brightness range.

    The random range (rather than always the full 8-bit span centered
    at mid-gray) gives the images varied mean tone, as real photographs
    have, so their block DC coefficients carry substantial energy."""
    rng = np.random.default_rng(seed)
    images = []
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    for _ in range(count):
        channels = []
        gx, gy = rng.uniform(-1, 1, size=2)
        ramp = gx * xx + gy * yy
        lo8 = rng.uniform(0.0, 140.0)
        hi8 = rng.uniform(lo8 + 60.0, 255.0)
        for _c in range(3):
            field = _blur(rng.normal(size=(size, size)), passes=6) + ramp
            lo, hi = field.min(), field.max()
            channels.append((field - lo) / (hi - lo + 1e-12))
        img = np.stack(channels, axis=-1) * (hi8 - lo8) + lo8
        images.append(RgbImage(np.clip(np.rint(img), 0, 255).astype(np.uint8)))
    return images


def make_grating_images(
    n_per_class: int, n_classes: int = 4, size: int = 8, seed: int = 0
):
    """Labeled toy face stand-ins: per-class oriented gratings with
    per-image amplitude and pixel jitter.

    Returns (list of RgbImage, labels array).
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    patterns = []
    for c in range(n_classes):
        angle = np.pi * c / n_classes
        freq = 2.0 * np.pi * (1 + c % 2) / size
        patterns.append(np.cos(freq * (np.cos(angle) * xx + np.sin(angle) * yy)))
    images, labels = [], []
    for c in range(n_classes):
        for _ in range(n_per_class):
            amp = 55.0 + rng.uniform(-10.0, 10.0)
            pix = 128.0 + amp * patterns[c] + rng.uniform(-4.0, 4.0, (size, size))
            rgb = np.repeat(pix[:, :, None], 3, axis=2)
            images.append(RgbImage(np.clip(np.rint(rgb), 0, 255).astype(np.uint8)))
            labels.append(c)
    return images, np.asarray(labels)
