"""Differentiable building blocks: shifted-window attention, channel-splitting
transformer blocks, attention refinement, feature fusion, pixel shuffle.

All feature maps are (batch, channels, height, width) tensors.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """Tile a feature map into non-overlapping windows.

    Args:
        x: (B, C, H, W) with H and W divisible by `window`.

    Returns:
        (num_windows * B, window*window, C) tokens, row-major within each window.
    """
    b, c, h, w = x.shape
    if h % window or w % window:
        raise ValueError(f"spatial dims {h}x{w} not divisible by window {window}")
    x = x.permute(0, 2, 3, 1)  # B, H, W, C
    x = x.reshape(b, h // window, window, w // window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, window * window, c)


def window_reverse(tokens: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of `window_partition`; returns (B, C, H, W)."""
    n_windows = (h // window) * (w // window)
    b = tokens.shape[0] // n_windows
    c = tokens.shape[-1]
    x = tokens.reshape(b, h // window, w // window, window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)
    return x.permute(0, 3, 1, 2)


def _relative_position_index(window: int) -> torch.Tensor:
    """Pairwise relative-position index into the (2w-1)^2 bias table."""
    coords = torch.stack(torch.meshgrid(
        torch.arange(window), torch.arange(window), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]        # 2, w², w²
    rel = rel.permute(1, 2, 0).contiguous()
    rel[:, :, 0] += window - 1
    rel[:, :, 1] += window - 1
    rel[:, :, 0] *= 2 * window - 1
    return rel.sum(-1)


def shift_attention_mask(h: int, w: int, window: int, shift: int,
                         device=None, dtype=torch.float32) -> torch.Tensor:
    """Additive mask (num_windows, w², w²) blocking attention across the
    wrap-around boundaries introduced by a cyclic shift."""
    img_mask = torch.zeros(1, 1, h, w, device=device)
    slices = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    cnt = 0
    for hs in slices:
        for ws in slices:
            img_mask[:, :, hs, ws] = cnt
            cnt += 1
    mask_windows = window_partition(img_mask, window).squeeze(-1)  # nW, w²
    mask = mask_windows.unsqueeze(1) - mask_windows.unsqueeze(2)
    return (mask != 0).to(dtype) * -100.0


class WindowAttention(nn.Module):
    """Shifted-window multi-head self-attention with relative position bias.

    Operates on whole feature maps: cyclically shifts, partitions into
    windows, attends per window (with masking of wrapped boundaries), and
    undoes the tiling and shift.

    Args:
        dim: channel count (must be divisible by `heads`).
        window: window side length; input dims must be multiples of it.
        heads: number of attention heads.
    """

    def __init__(self, dim: int, window: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"channels {dim} not divisible by heads {heads}")
        self.dim = dim
        self.window = window
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.relative_position_bias_table = nn.Parameter(
            torch.zeros((2 * window - 1) ** 2, heads))
        self.register_buffer("relative_position_index",
                             _relative_position_index(window), persistent=False)

    def forward(self, x: torch.Tensor, shift: int = 0, return_attn: bool = False):
        b, c, h, w = x.shape
        if c != self.dim:
            raise ValueError(f"expected {self.dim} channels, got {c}")
        if not 0 <= shift < self.window:
            raise ValueError(f"shift {shift} must lie in [0, window)")
        if shift:
            x = torch.roll(x, shifts=(-shift, -shift), dims=(2, 3))
        tokens = window_partition(x, self.window)      # B*nW, n, C
        bn, n, _ = tokens.shape

        qkv = self.qkv(tokens).reshape(bn, n, 3, self.heads, c // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)  # each B*nW, heads, n, hd
        attn = (q * self.scale) @ k.transpose(-2, -1)

        bias = self.relative_position_bias_table[self.relative_position_index.reshape(-1)]
        bias = bias.reshape(n, n, self.heads).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)

        if shift:
            mask = shift_attention_mask(h, w, self.window, shift,
                                        device=x.device, dtype=x.dtype)
            nw = mask.shape[0]
            attn = attn.reshape(bn // nw, nw, self.heads, n, n) + mask.unsqueeze(1).unsqueeze(0)
            attn = attn.reshape(bn, self.heads, n, n)
        attn = attn.softmax(dim=-1)

        out = (attn @ v).transpose(1, 2).reshape(bn, n, c)
        out = self.proj(out)
        x = window_reverse(out, self.window, h, w)
        if shift:
            x = torch.roll(x, shifts=(shift, shift), dims=(2, 3))
        if return_attn:
            return x, attn
        return x


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel dim of a (B, C, H, W) tensor."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class Mlp(nn.Module):
    """Per-position two-layer MLP with GELU."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        x = x.permute(0, 2, 3, 1)
        x = self.fc2(self.act(self.fc1(x)))
        return x.permute(0, 3, 1, 2)


class SwinTransformerBlock(nn.Module):
    """Pre-norm transformer block: windowed attention + MLP, both residual.

    Args:
        dim: channel count.
        window: attention window size.
        heads: attention heads.
        shift: cyclic shift applied before windowing (0 or window // 2).
        mlp_ratio: MLP hidden width as a multiple of `dim`.
    """

    def __init__(self, dim: int, window: int, heads: int, shift: int = 0,
                 mlp_ratio: float = 4.0):
        super().__init__()
        self.shift = shift
        self.norm1 = ChannelLayerNorm(dim)
        self.attn = WindowAttention(dim, window, heads)
        self.norm2 = ChannelLayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x):
        x = x + self.attn(self.norm1(x), shift=self.shift)
        x = x + self.mlp(self.norm2(x))
        return x


class SwinBasicLayer(nn.Module):
    """Two windowed transformer blocks, the second with half-window shift."""

    def __init__(self, dim: int, window: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.blocks = nn.ModuleList([
            SwinTransformerBlock(dim, window, heads, shift=0, mlp_ratio=mlp_ratio),
            SwinTransformerBlock(dim, window, heads, shift=window // 2, mlp_ratio=mlp_ratio),
        ])

    def forward(self, x):
        for blk in self.blocks:
            x = blk(x)
        return x


class SwinSplitBlock(nn.Module):
    """Channel-splitting transformer unit.

    Transforms N input channels, concatenates input and transformer output,
    mixes them with a 1x1 convolution to 2N channels, and splits the result
    into a feed-forward half and a refinement half.
    """

    def __init__(self, channels: int, window: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.channels = channels
        self.basic = SwinBasicLayer(channels, window, heads, mlp_ratio)
        self.merge = nn.Conv2d(2 * channels, 2 * channels, kernel_size=1)

    def forward(self, x) -> tuple[torch.Tensor, torch.Tensor]:
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        y = self.basic(x)
        z = self.merge(torch.cat([x, y], dim=1))
        return z[:, :self.channels], z[:, self.channels:]


class AttentionRefinementModule(nn.Module):
    """Channel attention over concatenated split features.

    Concatenates `n_splits` feature maps of `channels` each, gates every
    channel by a sigmoid of its global average, and reduces back to
    `channels` with a 1x1 convolution.
    """

    def __init__(self, n_splits: int, channels: int):
        super().__init__()
        self.n_splits = n_splits
        self.channels = channels
        total = n_splits * channels
        self.gate = nn.Conv2d(total, total, kernel_size=1)
        self.reduce = nn.Conv2d(total, channels, kernel_size=1)

    def forward(self, features: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(features) != self.n_splits:
            raise ValueError(f"expected {self.n_splits} feature maps, got {len(features)}")
        shape = features[0].shape
        for f in features[1:]:
            if f.shape != shape:
                raise ValueError("split feature maps must share shape")
        c = torch.cat(list(features), dim=1)
        a = torch.sigmoid(self.gate(F.adaptive_avg_pool2d(c, 1)))
        return self.reduce(c * a)


class FeatureFusionModule(nn.Module):
    """Concat-reduce fusion of the three branch features with an attention residual.

    The fused map f gets a squeeze-excite style gate a; output is f + f * a.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        hidden = max(channels // 4, 1)
        self.fuse = nn.Conv2d(3 * channels, channels, kernel_size=1)
        self.fc1 = nn.Conv2d(channels, hidden, kernel_size=1)
        self.fc2 = nn.Conv2d(hidden, channels, kernel_size=1)

    def forward(self, context, refined, spatial) -> torch.Tensor:
        for t in (context, refined, spatial):
            if t.shape != context.shape or t.shape[1] != self.channels:
                raise ValueError("fusion inputs must share shape with N channels each")
        f = F.relu(self.fuse(torch.cat([context, refined, spatial], dim=1)))
        a = torch.sigmoid(self.fc2(F.relu(self.fc1(F.adaptive_avg_pool2d(f, 1)))))
        return f + f * a


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Rearrange C*r^2 channels into an r-fold spatial upsampling (pure permutation)."""
    if x.shape[1] % (r * r):
        raise ValueError(f"channels {x.shape[1]} not divisible by r^2 = {r * r}")
    return F.pixel_shuffle(x, r)


def pixel_unshuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Inverse of `pixel_shuffle`."""
    if x.shape[-2] % r or x.shape[-1] % r:
        raise ValueError(f"spatial dims {tuple(x.shape[-2:])} not divisible by r = {r}")
    return F.pixel_unshuffle(x, r)
