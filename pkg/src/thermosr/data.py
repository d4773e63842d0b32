"""Paired LR/HR samples: pairing, patch extraction, augmentation, manifests."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .images import Image, load_image


@dataclasses.dataclass(frozen=True)
class PairedSample:
    """An aligned LR/HR image pair at an exact integer scale ratio.

    `registered` marks semi-matched cross-camera pairs produced by
    homography warping (as opposed to synthetically degraded pairs).
    """

    lr: Image
    hr: Image
    scale: int
    registered: bool = False

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if (self.hr.height != self.scale * self.lr.height
                or self.hr.width != self.scale * self.lr.width):
            raise ValueError(
                f"hr dims {self.hr.height}x{self.hr.width} are not exactly "
                f"{self.scale}x the lr dims {self.lr.height}x{self.lr.width}")


def random_crop_pair(sample: PairedSample, lr_patch: int, rng: np.random.Generator) -> PairedSample:
    """Crop a co-located (lr_patch, scale*lr_patch) patch pair.

    Offsets are drawn uniformly from `rng`; the hr offset is scale times
    the lr offset so the crops stay spatially aligned.
    """
    lr, hr, s = sample.lr, sample.hr, sample.scale
    if lr_patch < 1 or lr_patch > min(lr.height, lr.width):
        raise ValueError(
            f"patch {lr_patch} does not fit lr image {lr.height}x{lr.width}")
    oy = int(rng.integers(0, lr.height - lr_patch + 1))
    ox = int(rng.integers(0, lr.width - lr_patch + 1))
    lr_crop = lr.pixels[oy:oy + lr_patch, ox:ox + lr_patch]
    hr_crop = hr.pixels[s * oy:s * (oy + lr_patch), s * ox:s * (ox + lr_patch)]
    return PairedSample(
        lr=Image(lr_crop.copy(), lr.source_id),
        hr=Image(hr_crop.copy(), hr.source_id),
        scale=s,
        registered=sample.registered,
    )


# The 8 dihedral-group transforms, applied identically to lr and hr.
_DIHEDRAL = (
    lambda a: a,
    lambda a: np.rot90(a, 1),
    lambda a: np.rot90(a, 2),
    lambda a: np.rot90(a, 3),
    lambda a: np.fliplr(a),
    lambda a: np.flipud(a),
    lambda a: a.T,
    lambda a: np.rot90(a, 2).T,
)


def augment_pair(sample: PairedSample, rng: np.random.Generator) -> PairedSample:
    """Apply one dihedral transform (chosen uniformly) to both lr and hr."""
    t = _DIHEDRAL[int(rng.integers(0, 8))]
    return PairedSample(
        lr=Image(np.ascontiguousarray(t(sample.lr.pixels)), sample.lr.source_id),
        hr=Image(np.ascontiguousarray(t(sample.hr.pixels)), sample.hr.source_id),
        scale=sample.scale,
        registered=sample.registered,
    )


def write_manifest(path, entries: Sequence[dict]) -> None:
    """Write a pair manifest: a JSON array of {lr, hr, scale, registered}."""
    Path(path).write_text(json.dumps(list(entries), indent=2) + "\n")


def read_manifest(path) -> list[dict]:
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list):
        raise ValueError(f"manifest {path} is not a JSON array")
    for e in entries:
        missing = {"lr", "hr", "scale", "registered"} - set(e)
        if missing:
            raise ValueError(f"manifest entry missing keys {sorted(missing)}: {e}")
    return entries


def load_pairs(manifest_path, root: Optional[Path] = None) -> list[PairedSample]:
    """Load every pair listed in a manifest into memory.

    Relative lr/hr paths are resolved against `root` (defaults to the
    manifest's directory).
    """
    manifest_path = Path(manifest_path)
    base = Path(root) if root is not None else manifest_path.parent
    pairs = []
    for e in read_manifest(manifest_path):
        lr_path, hr_path = Path(e["lr"]), Path(e["hr"])
        if not lr_path.is_absolute():
            lr_path = base / lr_path
        if not hr_path.is_absolute():
            hr_path = base / hr_path
        pairs.append(PairedSample(
            lr=load_image(lr_path),
            hr=load_image(hr_path),
            scale=int(e["scale"]),
            registered=bool(e["registered"]),
        ))
    return pairs
