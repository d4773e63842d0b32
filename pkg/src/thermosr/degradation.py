"""Synthetic LR generation: bicubic resampling and additive white Gaussian noise.

The resampler is the de-facto "bicubic" used to build SR challenge data:
separable Keys cubic kernel (a = -0.5), pixel-center alignment, and a
kernel widened by the scale factor when downsampling (anti-aliasing).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .data import PairedSample
from .images import Image


@dataclasses.dataclass(frozen=True)
class DegradationConfig:
    scale: int = 4
    noise_sigma: float = 10.0  # AWGN std on the 0-255 scale
    seed: int = 0

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def cubic_kernel(x: np.ndarray) -> np.ndarray:
    """Keys cubic convolution kernel with a = -0.5 (support [-2, 2])."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2 = ax * ax
    ax3 = ax2 * ax
    return np.where(
        ax <= 1.0,
        1.5 * ax3 - 2.5 * ax2 + 1.0,
        np.where(ax < 2.0, -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0, 0.0),
    )


def _resample_weights(in_size: int, out_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-output-pixel contribution weights and (clamped) source indices."""
    scale = out_size / in_size
    # source coordinate of each output pixel center
    u = (np.arange(out_size, dtype=np.float64) + 0.5) / scale - 0.5
    if scale < 1.0:
        # widen the kernel by 1/scale when downsampling
        kwidth = 4.0 / scale
        taps = int(np.ceil(kwidth)) + 2
        left = np.floor(u - kwidth / 2).astype(np.int64)
        idx = left[:, None] + np.arange(taps)[None, :]
        w = scale * cubic_kernel(scale * (u[:, None] - idx))
    else:
        left = np.floor(u).astype(np.int64) - 1
        idx = left[:, None] + np.arange(4)[None, :]
        w = cubic_kernel(u[:, None] - idx)
    w = w / w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_size - 1)
    return w, idx


def _resample_axis0(px: np.ndarray, out_size: int) -> np.ndarray:
    w, idx = _resample_weights(px.shape[0], out_size)
    return np.einsum("ot,otc->oc", w, px[idx, :])


def bicubic_resample(img: Image, out_h: int, out_w: int) -> Image:
    """Resize to (out_h, out_w) with the anti-aliased Keys cubic kernel.

    Edges are handled by clamping source indices; the result is clipped
    to [0, 1].
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    px = _resample_axis0(img.pixels, out_h)
    px = _resample_axis0(px.T, out_w).T
    return Image(np.clip(px, 0.0, 1.0), img.source_id)


def bicubic_sample_at(px: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Evaluate an image at scattered (x, y) points with the Keys kernel.

    Out-of-bounds taps clamp to the nearest edge pixel. No anti-aliasing
    (point sampling); used by homography warping.
    """
    h, w = px.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    acc = np.zeros(xs.shape, dtype=np.float64)
    for j in (-1, 0, 1, 2):
        wy = cubic_kernel(fy - j)
        yi = np.clip(y0 + j, 0, h - 1)
        for i in (-1, 0, 1, 2):
            wx = cubic_kernel(fx - i)
            xi = np.clip(x0 + i, 0, w - 1)
            acc += wy * wx * px[yi, xi]
    return acc


def add_awgn(img: Image, sigma_255: float, rng: np.random.Generator) -> Image:
    """Add i.i.d. Gaussian noise (mean 0, std sigma_255/255), then clip."""
    if sigma_255 < 0:
        raise ValueError("sigma_255 must be >= 0")
    if sigma_255 == 0:
        return img
    noisy = img.pixels + rng.normal(0.0, sigma_255 / 255.0, size=img.pixels.shape)
    return Image(np.clip(noisy, 0.0, 1.0), img.source_id)


def make_lr(hr: Image, cfg: DegradationConfig, rng: np.random.Generator) -> PairedSample:
    """Degrade an HR image into a synthetic LR/HR pair.

    The HR image is first cropped (top-left) to the largest region
    divisible by the scale, then bicubic-downsampled, then AWGN is added
    to the downsampled result.
    """
    s = cfg.scale
    h2 = hr.height - hr.height % s
    w2 = hr.width - hr.width % s
    if h2 < s or w2 < s:
        raise ValueError(f"hr image {hr.height}x{hr.width} too small for scale {s}")
    hr_c = Image(hr.pixels[:h2, :w2].copy(), hr.source_id)
    lr = bicubic_resample(hr_c, h2 // s, w2 // s)
    lr = add_awgn(lr, cfg.noise_sigma, rng)
    return PairedSample(lr=lr, hr=hr_c, scale=s, registered=False)
