"""Reconstruction attacks against the perturbed frequency representation
and the privacy metrics used to score them.

White-box: the attacker knows the pipeline and inverts it (IDCT with a
guessed DC, optional non-local-means denoising). Black-box: a ridge
decoder trained on (perturbed tensor, original image) pairs. Privacy is
scored by PSNR and by cosine feature similarity under the recognizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bdct import FrequencyTensor, insert_dc
from .image_io import RgbImage
from .pipeline import image_to_tensor, tensor_to_image
from .bdct import remove_dc
from .recognizer import ToyRecognizer


def whitebox_attack(
    perturbed: FrequencyTensor,
    dc_guess: np.ndarray | None = None,
    upsample_factor: int = 8,
    denoise: bool = False,
    nlm_patch: int = 7,
    nlm_window: int = 21,
    nlm_h: float = 10.0,
) -> RgbImage:
    """Invert the pipeline from a DC-stripped perturbed tensor.

    dc_guess is either None (fill DCs with 0) or (hb, wb, 3) DC planes
    taken from a guessed source image.
    """
    if perturbed.dc_present:
        raise ValueError("white-box attack expects a DC-stripped tensor")
    img = tensor_to_image(insert_dc(perturbed, dc_guess), upsample_factor)
    if denoise:
        img = nlm_denoise(img, patch=nlm_patch, window=nlm_window, h=nlm_h)
    return img


def estimate_noise_sigma(pixels: np.ndarray) -> float:
    """Noise level from the median absolute deviation of horizontal
    first differences (robust to image content)."""
    diff = np.diff(pixels.astype(np.float64), axis=1).ravel() / np.sqrt(2.0)
    return float(1.4826 * np.median(np.abs(diff - np.median(diff))))


def nlm_denoise(img: RgbImage, patch: int = 7, window: int = 21, h: float = 10.0) -> RgbImage:
    """Non-local means denoising.

    Each pixel becomes a weighted average over the search window, with
    weights exp(-max(patch_mse - 2*sigma^2, 0) / h^2); patch_mse is the
    mean squared patch difference over all channels and sigma is
    estimated from the image itself.
    """
    if patch % 2 == 0 or window % 2 == 0:
        raise ValueError("patch and window sizes must be odd")
    hgt, wid = img.height, img.width
    if patch > min(hgt, wid) or window > min(hgt, wid):
        raise ValueError("patch/window larger than the image")

    x = img.pixels.astype(np.float64)
    sigma = estimate_noise_sigma(x)
    pr, wr = patch // 2, window // 2
    pad = pr + wr
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")

    acc = np.zeros_like(x)
    wsum = np.zeros((hgt, wid, 1))
    norm = patch * patch * 3
    for dy in range(-wr, wr + 1):
        for dx in range(-wr, wr + 1):
            shifted = xp[pad + dy - pr : pad + dy + hgt + pr,
                         pad + dx - pr : pad + dx + wid + pr]
            center = xp[pad - pr : pad + hgt + pr, pad - pr : pad + wid + pr]
            sq = np.sum((shifted - center) ** 2, axis=2)
            # box filter over the patch via 2-D cumulative sums
            c = np.cumsum(np.cumsum(sq, axis=0), axis=1)
            c = np.pad(c, ((1, 0), (1, 0)))
            d2 = (
                c[patch:, patch:] - c[:-patch, patch:]
                - c[patch:, :-patch] + c[:-patch, :-patch]
            ) / norm
            w = np.exp(-np.maximum(d2 - 2.0 * sigma * sigma, 0.0) / (h * h))[..., None]
            acc += w * shifted[pr : pr + hgt, pr : pr + wid]
            wsum += w
    out = acc / wsum
    return RgbImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


@dataclass(frozen=True)
class LinearDecoder:
    """Affine map from a flattened perturbed tensor to a flattened image."""

    weights: np.ndarray  # (input_dim, output_dim)
    bias: np.ndarray  # (output_dim,)
    image_shape: tuple
    ridge_lambda: float


def train_decoder(tensors, images, ridge_lambda: float = 1e-3) -> LinearDecoder:
    """Closed-form ridge regression from perturbed tensors to RGB images.

    Uses the dual (kernel) form when samples < features, so the solve is
    an n x n system either way. Raises on a singular system (possible at
    lambda = 0 with rank-deficient data).
    """
    if len(tensors) < 2 or len(tensors) != len(images):
        raise ValueError("need >= 2 (tensor, image) pairs")
    x = np.stack([np.asarray(t.values if isinstance(t, FrequencyTensor) else t)
                  .reshape(-1) for t in tensors]).astype(np.float64)
    image_shape = images[0].pixels.shape
    y = np.stack([im.pixels.reshape(-1) for im in images]).astype(np.float64)

    x_mean, y_mean = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - x_mean, y - y_mean
    n, p = xc.shape
    try:
        if n <= p:
            gram = xc @ xc.T + ridge_lambda * np.eye(n)
            weights = xc.T @ np.linalg.solve(gram, yc)
        else:
            gram = xc.T @ xc + ridge_lambda * np.eye(p)
            weights = np.linalg.solve(gram, xc.T @ yc)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"singular ridge system (lambda={ridge_lambda})") from e
    bias = y_mean - x_mean @ weights
    return LinearDecoder(weights, bias, image_shape, ridge_lambda)


def decode(d: LinearDecoder, perturbed) -> RgbImage:
    """Apply the decoder and clamp to valid 8-bit RGB."""
    values = perturbed.values if isinstance(perturbed, FrequencyTensor) else perturbed
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.shape[0] != d.weights.shape[0]:
        raise ValueError("decoder / tensor shape mismatch")
    flat = x @ d.weights + d.bias
    return RgbImage(
        np.clip(np.rint(flat.reshape(d.image_shape)), 0, 255).astype(np.uint8)
    )


def psnr(a: RgbImage, b: RgbImage) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError("image dimensions differ")
    mse = np.mean(
        (a.pixels.astype(np.float64) - b.pixels.astype(np.float64)) ** 2
    )
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(255.0**2 / mse))


def feature_similarity(
    embedder: ToyRecognizer, a: RgbImage, b: RgbImage, upsample_factor: int = 8
) -> float:
    """Cosine similarity of the clean-pipeline embeddings of two images."""
    feats = []
    for img in (a, b):
        t = remove_dc(image_to_tensor(img, upsample_factor))
        e, _ = embedder.embed(t.values.reshape(1, -1).astype(np.float32))
        feats.append(e[0])
    return float(np.dot(feats[0], feats[1]))


@dataclass
class AttackReport:
    """Per-image reconstruction metrics plus aggregates."""

    kind: str
    params: dict = field(default_factory=dict)
    psnrs: list = field(default_factory=list)
    similarities: list = field(default_factory=list)
    seed: int | None = None

    @staticmethod
    def _agg(xs):
        if not xs:
            return {}
        finite = [x for x in xs if np.isfinite(x)]
        vals = finite or xs
        return {
            "mean": float(np.mean(vals)),
            "min": float(np.min(xs)),
            "max": float(np.max(xs)),
        }

    def to_dict(self) -> dict:
        def enc(x):
            return "inf" if np.isinf(x) else float(x)

        return {
            "kind": self.kind,
            "params": self.params,
            "seed": self.seed,
            "psnr": [enc(x) for x in self.psnrs],
            "similarity": [float(x) for x in self.similarities],
            "psnr_aggregate": self._agg(self.psnrs),
            "similarity_aggregate": self._agg(self.similarities),
        }
