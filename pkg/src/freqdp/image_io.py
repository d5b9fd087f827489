"""Image loading, color conversion, range shifting and upsampling.

Everything upstream of the blockwise DCT. Images are kept as numpy
arrays wrapped in small dataclasses; all pixel math runs in float32
after decoding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

# Guard against runaway memory from upsampling (pixels, per channel).
MAX_PIXELS = 64 * 1024 * 1024


class ImageIoError(Exception):
    """Base class for image reading/writing failures."""


class UnreadableFileError(ImageIoError):
    """File missing or not readable."""


class UnsupportedFormatError(ImageIoError):
    """File exists but is not a supported PNG or P6 PPM."""


class CorruptDataError(ImageIoError):
    """Recognized format but the payload is damaged."""


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB image, pixels shaped (height, width, 3), dtype uint8."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError("RgbImage requires a (H, W, 3) uint8 array")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("empty image")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class YcbcrImage:
    """Real-valued YCbCr image, (H, W, 3) float32.

    Values are in [0, 255] straight after conversion and in
    [-128, 127] after shift_range.
    """

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError("YcbcrImage requires a (H, W, 3) array")
        if p.dtype != np.float32:
            raise ValueError("YcbcrImage pixels must be float32")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def load_image(path) -> RgbImage:
    """Load a PNG or binary PPM (P6) file as 8-bit RGB.

    PNG alpha channels are dropped. Raises UnreadableFileError,
    UnsupportedFormatError or CorruptDataError depending on what went
    wrong.
    """
    path = Path(path)
    try:
        head = path.open("rb").read(8)
    except OSError as e:
        raise UnreadableFileError(f"cannot read {path}: {e}") from e

    if head.startswith(b"\x89PNG"):
        return _load_png(path)
    if head.startswith(b"P6"):
        return _load_ppm(path)
    raise UnsupportedFormatError(f"{path}: not a PNG or binary PPM file")


def _load_png(path: Path) -> RgbImage:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("RGB", "RGBA", "L", "LA", "P"):
                raise UnsupportedFormatError(
                    f"{path}: unsupported PNG mode {im.mode}"
                )
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as e:
        raise CorruptDataError(f"{path}: invalid PNG data") from e
    except OSError as e:
        raise CorruptDataError(f"{path}: truncated or damaged PNG") from e
    return RgbImage(arr)


def _load_ppm(path: Path) -> RgbImage:
    data = path.read_bytes()
    try:
        fields, offset = _ppm_header_fields(data)
        width, height, maxval = (int(f) for f in fields[1:4])
    except (ValueError, IndexError) as e:
        raise CorruptDataError(f"{path}: malformed PPM header") from e
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: only maxval 255 PPM supported")
    if width < 1 or height < 1:
        raise CorruptDataError(f"{path}: bad PPM dimensions")
    payload = data[offset : offset + width * height * 3]
    if len(payload) != width * height * 3:
        raise CorruptDataError(f"{path}: PPM payload truncated")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return RgbImage(arr.copy())


def _ppm_header_fields(data: bytes):
    """Parse the first four whitespace-separated PPM header tokens,
    skipping comments; returns (fields, payload offset)."""
    fields = []
    i = 0
    while len(fields) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError("truncated header")
        fields.append(data[start:i])
    return fields, i + 1  # single whitespace byte after maxval


def save_image(img: RgbImage, path) -> None:
    """Write an RgbImage as PNG or binary PPM, chosen by extension."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")
    elif path.suffix.lower() in (".ppm", ".pnm"):
        header = b"P6\n%d %d\n255\n" % (img.width, img.height)
        path.write_bytes(header + img.pixels.tobytes())
    else:
        raise UnsupportedFormatError(f"{path}: unsupported output extension")


# Full-range BT.601 (JPEG) conversion matrices.
_RGB_TO_YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ],
    dtype=np.float32,
)
_YCBCR_OFFSET = np.array([0.0, 128.0, 128.0], dtype=np.float32)


def rgb_to_ycbcr(img: RgbImage) -> YcbcrImage:
    """Full-range BT.601 RGB -> YCbCr, clamped to [0, 255], no rounding."""
    rgb = img.pixels.astype(np.float32)
    ycc = rgb @ _RGB_TO_YCBCR.T + _YCBCR_OFFSET
    np.clip(ycc, 0.0, 255.0, out=ycc)
    return YcbcrImage(ycc)


def ycbcr_to_rgb(img: YcbcrImage) -> RgbImage:
    """Inverse BT.601 conversion; expects unshifted values in [0, 255]."""
    y = img.pixels[..., 0]
    cb = img.pixels[..., 1] - 128.0
    cr = img.pixels[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    rgb = np.stack([r, g, b], axis=-1)
    return RgbImage(np.clip(np.rint(rgb), 0, 255).astype(np.uint8))


def ycbcr_to_rgb_real(pixels: np.ndarray) -> np.ndarray:
    """Inverse conversion on a raw (H, W, 3) float array, unrounded."""
    y = pixels[..., 0]
    cb = pixels[..., 1] - 128.0
    cr = pixels[..., 2] - 128.0
    return np.stack(
        [y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb],
        axis=-1,
    )


def shift_range(img: YcbcrImage) -> YcbcrImage:
    """Shift [0, 255] values down to [-128, 127]."""
    return YcbcrImage(img.pixels - np.float32(128.0))


def unshift_range(img: YcbcrImage) -> YcbcrImage:
    """Undo shift_range."""
    return YcbcrImage(img.pixels + np.float32(128.0))


def upsample(img: YcbcrImage, factor: int) -> YcbcrImage:
    """Nearest-neighbor upsampling: each pixel becomes a factor x factor block."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return img
    out_pixels = img.height * img.width * factor * factor
    if out_pixels > MAX_PIXELS:
        raise ValueError(
            f"upsampled size {out_pixels} pixels exceeds cap {MAX_PIXELS}"
        )
    up = np.repeat(np.repeat(img.pixels, factor, axis=0), factor, axis=1)
    return YcbcrImage(up)


def downsample(img: YcbcrImage, factor: int) -> YcbcrImage:
    """Block-average downsampling, the adjoint of nearest-neighbor upsample."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return img
    h, w = img.height, img.width
    if h % factor or w % factor:
        raise ValueError("dimensions not divisible by downsample factor")
    p = img.pixels.reshape(h // factor, factor, w // factor, factor, 3)
    return YcbcrImage(p.mean(axis=(1, 3), dtype=np.float32).astype(np.float32))
