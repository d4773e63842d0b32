"""Single-channel image representation and PNG I/O.

All pixel data is kept as float64 in [0, 1]. Files are 8- or 16-bit
grayscale PNG (RGB inputs are reduced to BT.601 luminance on load).
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image as PILImage

# ITU-R BT.601 luminance weights for RGB reduction
_LUMA = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    """Raised for rasters this library cannot represent."""


@dataclasses.dataclass(frozen=True)
class Image:
    """A single-channel raster with values in [0, 1].

    Attributes:
        pixels: 2-D float64 array, row-major.
        source_id: optional tag naming the camera/dataset origin.
    """

    pixels: np.ndarray
    source_id: Optional[str] = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageFormatError(f"expected non-empty 2-D pixel array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite pixel values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def load_image(path) -> Image:
    """Load an 8/16-bit PNG or TIFF as a normalized single-channel image.

    RGB(A) inputs are reduced to BT.601 luminance. Values are divided by
    the maximum code value of the file's bit depth.
    """
    path = Path(path)
    with PILImage.open(path) as im:
        im.load()
        if im.width < 1 or im.height < 1:
            raise ImageFormatError(f"zero-sized image: {path}")
        mode = im.mode
        if mode in ("RGB", "RGBA", "P"):
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
            px = (arr @ _LUMA) / 255.0
        elif mode == "L":
            px = np.asarray(im, dtype=np.float64) / 255.0
        elif mode in ("I;16", "I;16B", "I;16L", "I"):
            px = np.asarray(im, dtype=np.float64) / 65535.0
        elif mode == "F":
            px = np.asarray(im, dtype=np.float64)
        else:
            raise ImageFormatError(f"unsupported raster mode {mode!r}: {path}")
    px = np.clip(px, 0.0, 1.0)
    return Image(pixels=px, source_id=path.stem)


def save_image(img: Image, path, bitdepth: int = 8) -> None:
    """Write a PNG, quantizing by round(v * (2^bitdepth - 1))."""
    if bitdepth not in (8, 16):
        raise ValueError(f"bitdepth must be 8 or 16, got {bitdepth}")
    path = Path(path)
    peak = (1 << bitdepth) - 1
    q = np.floor(img.pixels * peak + 0.5)
    if bitdepth == 8:
        out = PILImage.fromarray(q.astype(np.uint8), mode="L")
    else:
        out = PILImage.fromarray(q.astype(np.uint16))
    out.save(path, format="PNG")
