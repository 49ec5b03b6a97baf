"""8-bit image container and file I/O.

Pixels are stored as a (height, width, channels) uint8 array, row-major
and channel-interleaved. Binary PPM (P6) and PGM (P5) with maxval 255 are
read and written natively; PNG and JPEG decoding is delegated to Pillow.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError


@dataclass
class Image:
    """An 8-bit image; ``pixels`` has shape (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim == 2:
            p = p[:, :, None]
        if p.ndim != 3 or p.shape[2] not in (1, 3):
            raise DataError(f"pixels must be HxWx1 or HxWx3, got shape {p.shape}")
        if p.dtype != np.uint8:
            if np.any(p < 0) or np.any(p > 255):
                raise DataError("pixel intensities must lie in [0, 255]")
            p = p.astype(np.uint8)
        self.pixels = p

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return self.pixels.shape[2]

    def to_rgb(self):
        """Return a 3-channel copy (grayscale replicated across channels)."""
        if self.channels == 3:
            return Image(self.pixels.copy())
        return Image(np.repeat(self.pixels, 3, axis=2))


def _read_netpbm_header(data, path):
    # magic, width, height, maxval separated by whitespace; '#' starts a comment
    pos = 0
    fields = []
    while len(fields) < 4:
        if pos >= len(data):
            raise DataError(f"{path}: truncated netpbm header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            fields.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return fields, pos + 1


def read_netpbm(path):
    """Read a binary PPM (P6) or PGM (P5) file with maxval 255."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _read_netpbm_header(data, path)
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: unsupported netpbm magic {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise DataError(f"{path}: malformed netpbm header") from None
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    n = w * h * channels
    raster = data[offset : offset + n]
    if len(raster) < n:
        raise DataError(f"{path}: raster truncated ({len(raster)} of {n} bytes)")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, channels)
    return Image(pixels.copy())


def write_netpbm(image, path):
    """Write a binary PPM (3 channels) or PGM (1 channel), maxval 255."""
    magic = b"P6" if image.channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, image.width, image.height)
    Path(path).write_bytes(header + image.pixels.tobytes())


def load_image(path):
    """Load an image by extension: ppm/pgm natively, png/jpeg via Pillow."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm"):
        return read_netpbm(path)
    if suffix in (".png", ".jpg", ".jpeg"):
        from PIL import Image as PILImage

        with PILImage.open(path) as im:
            mode = "L" if im.mode in ("1", "L", "I;16", "I") else "RGB"
            return Image(np.asarray(im.convert(mode)))
    raise DataError(f"{path}: unsupported image format {suffix!r}")
