"""8x8 blockwise orthonormal type-II DCT, channel tensorization and
DC handling.

Channel layout of a FrequencyTensor: k = color * 64 + u * 8 + v, with
colors concatenated Y, Cb, Cr and (u, v) the vertical/horizontal
frequency index in row-major order. The DC channels are therefore
0, 64 and 128; after remove_dc the remaining 189 channels keep their
relative order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image_io import YcbcrImage

BLOCK = 8
CHANNELS_WITH_DC = 192
CHANNELS_NO_DC = 189
DC_CHANNELS = (0, 64, 128)

# Indices into the 192-channel layout that survive remove_dc, in order.
AC_CHANNEL_INDICES = np.array(
    [k for k in range(CHANNELS_WITH_DC) if k not in DC_CHANNELS], dtype=np.int64
)


def _dct_basis() -> np.ndarray:
    """Orthonormal 8-point DCT-II matrix D with D @ D.T = I."""
    x = np.arange(BLOCK)
    u = np.arange(BLOCK)[:, None]
    d = np.cos((2 * x + 1) * u * np.pi / (2 * BLOCK))
    d *= np.sqrt(2.0 / BLOCK)
    d[0] *= np.sqrt(0.5)
    return d


_D = _dct_basis()
_D32 = _D.astype(np.float32)


@dataclass(frozen=True)
class FrequencyTensor:
    """Blockwise DCT coefficients of one image, shaped (hb, wb, channels)."""

    values: np.ndarray
    dc_present: bool = True
    colorspace: str = "ycbcr"

    def __post_init__(self):
        v = self.values
        if v.ndim != 3:
            raise ValueError("FrequencyTensor values must be (hb, wb, C)")
        expected = CHANNELS_WITH_DC if self.dc_present else CHANNELS_NO_DC
        if v.shape[2] != expected:
            raise ValueError(
                f"expected {expected} channels (dc_present={self.dc_present}), "
                f"got {v.shape[2]}"
            )

    @property
    def hb(self) -> int:
        return self.values.shape[0]

    @property
    def wb(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def dct8_forward(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D type-II DCT of a single 8x8 block."""
    if block.shape != (BLOCK, BLOCK):
        raise ValueError("block must be 8x8")
    return _D @ block @ _D.T


def dct8_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct8_forward."""
    if coeffs.shape != (BLOCK, BLOCK):
        raise ValueError("coeffs must be 8x8")
    return _D.T @ coeffs @ _D


def tensorize(img: YcbcrImage) -> FrequencyTensor:
    """Forward BDCT of a range-shifted YCbCr image into channel form.

    Requires width and height divisible by 8; non-divisible images are
    rejected rather than padded so calibrated sensitivities stay exact.
    """
    h, w = img.height, img.width
    if h % BLOCK or w % BLOCK:
        raise ValueError(f"image dimensions {h}x{w} not divisible by 8")
    hb, wb = h // BLOCK, w // BLOCK
    # (hb, wb, 8, 8, 3) view of the blocks
    blocks = (
        img.pixels.reshape(hb, BLOCK, wb, BLOCK, 3)
        .transpose(0, 2, 1, 3, 4)
        .astype(np.float32)
    )
    # Apply D . B . D^T on the two block axes for all blocks/colors at once.
    coeffs = np.einsum("ux,rcxyk,vy->rcuvk", _D32, blocks, _D32)
    values = coeffs.transpose(0, 1, 4, 2, 3).reshape(hb, wb, CHANNELS_WITH_DC)
    return FrequencyTensor(np.ascontiguousarray(values), dc_present=True)


def detensorize(t: FrequencyTensor) -> YcbcrImage:
    """Inverse BDCT back to a range-shifted YCbCr image."""
    if not t.dc_present:
        raise ValueError("DC channels missing; call insert_dc first")
    hb, wb = t.hb, t.wb
    coeffs = t.values.reshape(hb, wb, 3, BLOCK, BLOCK).transpose(0, 1, 3, 4, 2)
    blocks = np.einsum("ux,rcuvk,vy->rcxyk", _D32, coeffs, _D32)
    pixels = blocks.transpose(0, 2, 1, 3, 4).reshape(hb * BLOCK, wb * BLOCK, 3)
    return YcbcrImage(np.ascontiguousarray(pixels.astype(np.float32)))


def remove_dc(t: FrequencyTensor) -> FrequencyTensor:
    """Drop the three per-color DC channels (indices 0, 64, 128)."""
    if not t.dc_present:
        raise ValueError("DC channels already removed")
    values = np.ascontiguousarray(t.values[:, :, AC_CHANNEL_INDICES])
    return FrequencyTensor(values, dc_present=False, colorspace=t.colorspace)


def extract_dc(t: FrequencyTensor) -> np.ndarray:
    """The (hb, wb, 3) DC planes of a full tensor."""
    if not t.dc_present:
        raise ValueError("tensor has no DC channels")
    return np.ascontiguousarray(t.values[:, :, list(DC_CHANNELS)])


def insert_dc(t: FrequencyTensor, dc: np.ndarray | None = None) -> FrequencyTensor:
    """Re-insert DC channels (zeros when dc is None) at their original slots."""
    if t.dc_present:
        raise ValueError("tensor already has DC channels")
    if dc is None:
        dc = np.zeros((t.hb, t.wb, 3), dtype=t.values.dtype)
    if dc.shape != (t.hb, t.wb, 3):
        raise ValueError(f"DC planes must be {(t.hb, t.wb, 3)}, got {dc.shape}")
    full = np.empty((t.hb, t.wb, CHANNELS_WITH_DC), dtype=t.values.dtype)
    full[:, :, AC_CHANNEL_INDICES] = t.values
    for i, k in enumerate(DC_CHANNELS):
        full[:, :, k] = dc[:, :, i]
    return FrequencyTensor(full, dc_present=True, colorspace=t.colorspace)


def energy_profile(tensors) -> np.ndarray:
    """Per-channel fraction of total squared coefficient energy.

    Accepts any iterable of FrequencyTensor with consistent channel
    counts; returns an array summing to 1.
    """
    totals = None
    for t in tensors:
        e = np.sum(t.values.astype(np.float64) ** 2, axis=(0, 1))
        if totals is None:
            totals = e
        elif e.shape != totals.shape:
            raise ValueError("inconsistent channel counts across tensors")
        else:
            totals += e
    if totals is None:
        raise ValueError("energy_profile needs at least one tensor")
    s = totals.sum()
    if s == 0:
        raise ValueError("all-zero tensors have no energy profile")
    return totals / s
