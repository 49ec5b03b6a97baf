"""Image-level preprocessing: resizing, contrast equalization, geometric
augmentation, and conversion to network input tensors.

The standard pipeline is resize -> histogram_equalize at dataset load,
augment per epoch during training, then normalize to a float (C, H, W)
tensor in [0, 1].
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, ShapeError
from .image import Image


@dataclass(frozen=True)
class AugmentParams:
    """One concrete geometric transform draw.

    ``seed`` records which draw produced the parameters when they were
    sampled from :class:`AugmentRanges`; the transform itself is
    deterministic in the other four fields.
    """

    rotation_deg: float = 0.0
    shift_x_frac: float = 0.0
    shift_y_frac: float = 0.0
    zoom: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.zoom <= 0:
            raise DataError(f"zoom must be positive, got {self.zoom}")
        if abs(self.shift_x_frac) >= 1 or abs(self.shift_y_frac) >= 1:
            raise DataError("shift fractions must have magnitude < 1")


@dataclass(frozen=True)
class AugmentRanges:
    """Uniform sampling ranges for per-image augmentation draws."""

    rotation_deg: tuple = (-20.0, 20.0)
    shift_frac: tuple = (-0.1, 0.1)
    zoom: tuple = (0.9, 1.1)

    def sample(self, rng, seed=0):
        return AugmentParams(
            rotation_deg=rng.uniform(*self.rotation_deg),
            shift_x_frac=rng.uniform(*self.shift_frac),
            shift_y_frac=rng.uniform(*self.shift_frac),
            zoom=rng.uniform(*self.zoom),
            seed=seed,
        )


def _round_half_up(values):
    return np.floor(values + 0.5)


def resize(image, target_w, target_h):
    """Bilinear resize to exactly (target_w, target_h); aspect ratio is not
    preserved. Source coordinates follow the corner-aligned mapping, so the
    output corners equal the input corners."""
    if target_w < 1 or target_h < 1:
        raise ShapeError(f"resize target must be positive, got {target_w}x{target_h}")
    src = image.pixels
    h, w = image.height, image.width
    if (target_w, target_h) == (w, h):
        return Image(src.copy())

    def coords(n_dst, n_src):
        if n_dst == 1:
            return np.full(1, (n_src - 1) / 2.0)
        return np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))

    sx = coords(target_w, w)
    sy = coords(target_h, h)
    x0 = np.clip(np.floor(sx).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(sy).astype(int), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[None, :, None]
    fy = (sy - y0)[:, None, None]

    p = src.astype(np.float64)
    top = p[y0[:, None], x0[None, :]] * (1 - fx) + p[y0[:, None], x1[None, :]] * fx
    bottom = p[y1[:, None], x0[None, :]] * (1 - fx) + p[y1[:, None], x1[None, :]] * fx
    blended = top * (1 - fy) + bottom * fy
    return Image(np.clip(_round_half_up(blended), 0, 255).astype(np.uint8))


def _equalize_lut(channel):
    """Map intensities through the cumulative histogram onto [0, 255]."""
    hist = np.bincount(channel.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = channel.size
    cdf_min = cdf[np.nonzero(hist)[0][0]]
    if n == cdf_min:  # constant channel: denominator would be 0
        return None
    lut = _round_half_up((cdf - cdf_min) * 255.0 / (n - cdf_min))
    return np.clip(lut, 0, 255).astype(np.uint8)


def histogram_equalize(image, mode="per-channel"):
    """Spread each channel's contrast over the full [0, 255] range.

    ``mode``: "per-channel" equalizes every channel independently;
    "luminance" derives one lookup table from the Rec. 601 luma of an RGB
    image and applies it to all channels. Constant channels are returned
    unchanged.
    """
    pixels = image.pixels
    if mode == "per-channel":
        out = np.empty_like(pixels)
        for c in range(image.channels):
            lut = _equalize_lut(pixels[:, :, c])
            out[:, :, c] = pixels[:, :, c] if lut is None else lut[pixels[:, :, c]]
        return Image(out)
    if mode == "luminance":
        if image.channels == 1:
            return histogram_equalize(image, "per-channel")
        luma = _round_half_up(
            0.299 * pixels[:, :, 0] + 0.587 * pixels[:, :, 1] + 0.114 * pixels[:, :, 2]
        ).astype(np.uint8)
        lut = _equalize_lut(luma)
        return Image(pixels.copy() if lut is None else lut[pixels])
    raise DataError(f"unknown equalization mode {mode!r}")


def augment(image, params):
    """Apply rotation about the image center, then zoom about the center,
    then translation, in that order.

    Each output pixel is inverse-mapped through the transform chain and
    sampled with nearest-neighbor lookup; coordinates falling outside the
    image take the nearest edge pixel, so no new intensity values appear.
    """
    h, w = image.height, image.width
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))

    # invert the forward chain: undo translation, then zoom, then rotation
    xs = xs - params.shift_x_frac * w
    ys = ys - params.shift_y_frac * h
    xs = (xs - cx) / params.zoom
    ys = (ys - cy) / params.zoom
    theta = math.radians(params.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    src_x = cos_t * xs + sin_t * ys + cx
    src_y = -sin_t * xs + cos_t * ys + cy

    ix = np.clip(_round_half_up(src_x).astype(int), 0, w - 1)
    iy = np.clip(_round_half_up(src_y).astype(int), 0, h - 1)
    return Image(image.pixels[iy, ix])


def normalize(image):
    """Channel-major float tensor (C, H, W) with intensities scaled to [0, 1]."""
    return image.pixels.astype(np.float64).transpose(2, 0, 1) / 255.0


def normalize_batch(pixel_batch, dtype=np.float32):
    """Vectorized :func:`normalize` for a (N, H, W, C) uint8 batch."""
    return np.ascontiguousarray(pixel_batch.transpose(0, 3, 1, 2)).astype(dtype) / dtype(255.0)
