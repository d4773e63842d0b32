"""Training objectives and evaluation metrics: L1, SSIM, LSGAN losses, PSNR."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch
import torch.nn.functional as F

# PSNR returned for a zero-MSE pair (identical images)
PSNR_CAP_DB = 100.0


@dataclasses.dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError("window_size must be an odd integer >= 3")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def gaussian_window(size: int, sigma: float, dtype=torch.float64) -> torch.Tensor:
    """Normalized 2-D Gaussian window of shape (1, 1, size, size)."""
    xs = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    w2 = torch.outer(g, g)
    return w2.reshape(1, 1, size, size)


def ssim(pred: torch.Tensor, target: torch.Tensor, p: SsimParams = SsimParams()) -> torch.Tensor:
    """Mean SSIM over valid (un-padded) window positions. Differentiable.

    Local statistics use a Gaussian window; the per-pixel index is
    ((2*mu_x*mu_y + C1) * (2*cov + C2)) / ((mu_x^2 + mu_y^2 + C1) * (var_x + var_y + C2)).
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.ndim != 4:
        raise ValueError("expected (batch, channels, height, width) tensors")
    if pred.shape[-2] < p.window_size or pred.shape[-1] < p.window_size:
        raise ValueError(
            f"image {tuple(pred.shape[-2:])} smaller than SSIM window {p.window_size}")
    channels = pred.shape[1]
    win = gaussian_window(p.window_size, p.gaussian_sigma, dtype=pred.dtype)
    win = win.to(pred.device).expand(channels, 1, -1, -1)

    mu_x = F.conv2d(pred, win, groups=channels)
    mu_y = F.conv2d(target, win, groups=channels)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    var_x = F.conv2d(pred * pred, win, groups=channels) - mu_xx
    var_y = F.conv2d(target * target, win, groups=channels) - mu_yy
    cov = F.conv2d(pred * target, win, groups=channels) - mu_xy

    c1 = (p.k1 * p.dynamic_range) ** 2
    c2 = (p.k2 * p.dynamic_range) ** 2
    ssim_map = ((2 * mu_xy + c1) * (2 * cov + c2)) / ((mu_xx + mu_yy + c1) * (var_x + var_y + c2))
    return ssim_map.mean()


def ssim_loss(pred: torch.Tensor, target: torch.Tensor, p: SsimParams = SsimParams()) -> torch.Tensor:
    """1 - SSIM; zero iff structurally identical under the window statistics."""
    return 1.0 - ssim(pred, target, p)


def lsgan_d_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator loss with targets real=1, fake=0."""
    return 0.5 * ((d_real - 1.0) ** 2).mean() + 0.5 * (d_fake ** 2).mean()


def lsgan_g_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares generator loss driving fake scores toward 1."""
    return 0.5 * ((d_fake - 1.0) ** 2).mean()


def psnr(pred: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs return the 100 dB cap."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak * peak / mse)


def ssim_metric(pred: np.ndarray, target: np.ndarray, p: SsimParams = SsimParams()) -> float:
    """SSIM between two 2-D arrays, computed in float64."""
    tx = torch.from_numpy(np.asarray(pred, dtype=np.float64)).reshape(1, 1, *pred.shape)
    ty = torch.from_numpy(np.asarray(target, dtype=np.float64)).reshape(1, 1, *target.shape)
    return float(ssim(tx, ty, p))
