"""Generator/discriminator assembly, deterministic init, checkpoint I/O.

Checkpoint container layout (single file):

    bytes 0..7    magic ``b"TSRCKPT1"``
    bytes 8..15   u64 little-endian: manifest length in bytes
    manifest      UTF-8 JSON: format_version, kind, config, step,
                  arrays [{name, shape, dtype}...], optimizer, rng_state
    data          raw little-endian array bytes, concatenated in manifest order
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import (
    AttentionRefinementModule,
    FeatureFusionModule,
    SwinBasicLayer,
    SwinSplitBlock,
    WindowAttention,
    pixel_shuffle,
)

_MAGIC = b"TSRCKPT1"
CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file is corrupt or inconsistent."""


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Generator hyperparameters.

    n_channels is the per-branch feature width N; n_blocks the number of
    channel-splitting units K in the context branch.
    """

    n_channels: int = 64
    n_blocks: int = 8
    window: int = 8
    heads: int = 4
    mlp_ratio: float = 4.0
    scale: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_channels < 1 or self.n_channels % self.heads:
            raise ValueError(
                f"n_channels {self.n_channels} must be positive and divisible by heads {self.heads}")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")


@dataclasses.dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")


class BilateralSRNet(nn.Module):
    """Two-branch super-resolution generator.

    A shared 3x3 stem feeds a context branch (5x5 conv to 2N channels,
    split across K channel-splitting transformer units feeding an
    attention refinement module) and a spatial branch (5x5 conv to N
    channels plus one two-block windowed transformer layer). Context,
    refined, and spatial features are fused and upsampled by repeated
    conv + pixel-shuffle x2 stages to a single-channel residual-free output.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        n = config.n_channels
        self.stem = nn.Conv2d(1, n, kernel_size=3, padding=1)
        self.context_entry = nn.Conv2d(n, 2 * n, kernel_size=5, padding=2)
        self.context_blocks = nn.ModuleList([
            SwinSplitBlock(n, config.window, config.heads, config.mlp_ratio)
            for _ in range(config.n_blocks)
        ])
        self.spatial_entry = nn.Conv2d(n, n, kernel_size=5, padding=2)
        self.spatial_layer = SwinBasicLayer(n, config.window, config.heads, config.mlp_ratio)
        self.arm = AttentionRefinementModule(config.n_blocks + 1, n)
        self.ffm = FeatureFusionModule(n)
        self.upsample = nn.ModuleList([
            nn.Conv2d(n, 4 * n, kernel_size=3, padding=1)
            for _ in range(int(math.log2(config.scale)))
        ])
        self.head = nn.Conv2d(n, 1, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Map a (B, 1, H, W) batch to (B, 1, scale*H, scale*W).

        Inputs are reflect-padded to window multiples; the output is
        cropped back. Values are not clipped here (clip at image export).
        """
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (B, 1, H, W) input, got {tuple(x.shape)}")
        b, _, h, w = x.shape
        n = self.config.n_channels
        pad_h = (-h) % self.config.window
        pad_w = (-w) % self.config.window
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")

        feat = self.stem(x)
        entry = self.context_entry(feat)
        chain, first_split = entry[:, :n], entry[:, n:]
        splits = [first_split]
        for blk in self.context_blocks:
            chain, to_arm = blk(chain)
            splits.append(to_arm)
        context = chain

        spatial = self.spatial_layer(self.spatial_entry(feat))
        refined = self.arm(splits)
        fused = self.ffm(context, refined, spatial)

        y = fused
        for conv in self.upsample:
            y = pixel_shuffle(conv(y), 2)
        y = self.head(y)
        return y[:, :, :self.config.scale * h, :self.config.scale * w]


class PatchDiscriminator(nn.Module):
    """Patch-level least-squares discriminator.

    Five 4x4 convolutions (strides 2, 2, 2, 1, 1), channel widths
    base * {1, 2, 4, 8}, leaky-rectifier slope 0.2, and a raw 1-channel
    score map (one score per receptive-field patch, no sigmoid).
    """

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        b = config.base_channels
        specs = [(1, b, 2), (b, 2 * b, 2), (2 * b, 4 * b, 2), (4 * b, 8 * b, 1), (8 * b, 1, 1)]
        self.convs = nn.ModuleList([
            nn.Conv2d(cin, cout, kernel_size=4, stride=stride, padding=1)
            for cin, cout, stride in specs
        ])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs[:-1]:
            x = F.leaky_relu(conv(x), negative_slope=0.2)
        return self.convs[-1](x)


def init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministically initialize all parameters from a dedicated generator.

    Convolutions get fan-in-scaled uniform weights; attention/MLP linears
    truncated normal (std 0.02) with zero bias; norms identity; relative
    position bias tables zero-mean normal (std 0.02).
    """
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                bound = 1.0 / math.sqrt(fan_in)
                m.weight.uniform_(-bound, bound, generator=g)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=g)
            elif isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02, generator=g)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
            if isinstance(m, WindowAttention):
                m.relative_position_bias_table.normal_(0.0, 0.02, generator=g)


def build_model(config: ModelConfig) -> BilateralSRNet:
    """Construct the generator with deterministic parameters from config.seed."""
    model = BilateralSRNet(config)
    init_parameters(model, config.seed)
    return model


def build_discriminator(config: DiscriminatorConfig) -> PatchDiscriminator:
    model = PatchDiscriminator(config)
    init_parameters(model, config.seed)
    return model


@dataclasses.dataclass
class Checkpoint:
    """In-memory checkpoint: a rebuilt model plus training state."""

    model: nn.Module
    config: object
    step: int
    optimizer_state: Optional[dict]
    rng_state: Optional[dict]


def _config_to_dict(config) -> dict:
    return dataclasses.asdict(config)


def _config_from_dict(kind: str, d: dict):
    if kind == "generator":
        return ModelConfig(**d)
    if kind == "discriminator":
        return DiscriminatorConfig(**d)
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def save_checkpoint(path, model: nn.Module, step: int,
                    optimizer: Optional[torch.optim.Optimizer] = None,
                    rng_state: Optional[dict] = None) -> None:
    """Serialize model parameters, optimizer state, and rng state to `path`."""
    if isinstance(model, BilateralSRNet):
        kind = "generator"
    elif isinstance(model, PatchDiscriminator):
        kind = "discriminator"
    else:
        raise ValueError(f"cannot checkpoint a {type(model).__name__}")

    arrays: list[tuple[str, np.ndarray]] = []
    for name, tensor in model.state_dict().items():
        arrays.append((f"param/{name}", tensor.detach().cpu().numpy()))

    optimizer_meta = None
    if optimizer is not None:
        # canonical ordering: a restored optimizer rebuilds its state dict in a
        # different insertion order than a fresh one, and save bytes must not
        # depend on that
        sd = optimizer.state_dict()
        for idx in sorted(sd["state"]):
            state = sd["state"][idx]
            for key in sorted(state):
                arrays.append((f"opt/{idx}/{key}",
                               np.atleast_1d(state[key].detach().cpu().numpy())))
        optimizer_meta = {
            "param_groups": sd["param_groups"],
            "state_keys": {str(i): sorted(sd["state"][i].keys()) for i in sorted(sd["state"])},
        }

    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "config": _config_to_dict(model.config),
        "step": int(step),
        "arrays": [
            {"name": name, "shape": list(a.shape), "dtype": str(a.dtype)}
            for name, a in arrays
        ],
        "optimizer": optimizer_meta,
        "rng_state": rng_state,
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> Checkpoint:
    """Rebuild the model described by a checkpoint and restore its parameters."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest: {e}") from e
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version")

    offset = 16 + mlen
    loaded: dict[str, np.ndarray] = {}
    for spec in manifest["arrays"]:
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = dtype.itemsize * count
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated array data at {spec['name']}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        loaded[spec["name"]] = arr.reshape(spec["shape"]).astype(dtype.newbyteorder("="))
        offset += nbytes

    config = _config_from_dict(manifest["kind"], manifest["config"])
    model = build_model(config) if manifest["kind"] == "generator" else build_discriminator(config)

    expected = model.state_dict()
    state = {}
    for name, ref in expected.items():
        key = f"param/{name}"
        if key not in loaded:
            raise CheckpointError(f"{path}: missing parameter {name}")
        arr = loaded[key]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: file {tuple(arr.shape)} vs model {tuple(ref.shape)}")
        state[name] = torch.from_numpy(arr.copy()).to(ref.dtype)
    stray = [k for k in loaded if k.startswith("param/") and k[len("param/"):] not in expected]
    if stray:
        raise CheckpointError(f"{path}: unexpected parameters {stray}")
    model.load_state_dict(state)

    optimizer_state = None
    if manifest.get("optimizer") is not None:
        meta = manifest["optimizer"]
        opt_state = {}
        for idx_str, keys in meta["state_keys"].items():
            entry = {}
            for key in keys:
                arr = loaded[f"opt/{idx_str}/{key}"]
                t = torch.from_numpy(arr.copy())
                entry[key] = t.reshape(()) if key == "step" else t
            opt_state[int(idx_str)] = entry
        optimizer_state = {"state": opt_state, "param_groups": meta["param_groups"]}

    return Checkpoint(
        model=model,
        config=config,
        step=int(manifest["step"]),
        optimizer_state=optimizer_state,
        rng_state=manifest.get("rng_state"),
    )
