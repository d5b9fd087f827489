"""End-to-end forward/inverse transform between RGB images and
frequency tensors: color conversion, range shift, upsampling, BDCT.
"""

from __future__ import annotations

from .bdct import FrequencyTensor, detensorize, tensorize
from .image_io import (
    RgbImage,
    downsample,
    rgb_to_ycbcr,
    shift_range,
    unshift_range,
    upsample,
    ycbcr_to_rgb,
)

DEFAULT_UPSAMPLE = 8


def image_to_tensor(img: RgbImage, factor: int = DEFAULT_UPSAMPLE) -> FrequencyTensor:
    """RGB -> YCbCr -> shift -> upsample -> blockwise DCT (DC kept)."""
    return tensorize(upsample(shift_range(rgb_to_ycbcr(img)), factor))


def tensor_to_image(t: FrequencyTensor, factor: int = DEFAULT_UPSAMPLE) -> RgbImage:
    """Inverse of image_to_tensor; rounds and clamps back to 8-bit RGB."""
    return ycbcr_to_rgb(unshift_range(downsample(detensorize(t), factor)))
