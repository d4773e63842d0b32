"""Training loops for both challenge tracks, ensemble inference, and the
directory-level PSNR/SSIM evaluation harness."""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path
from typing import Optional, Sequence, TextIO

import numpy as np
import torch

from .data import PairedSample, augment_pair, random_crop_pair
from .images import Image, load_image
from .losses import l1_loss, lsgan_d_loss, lsgan_g_loss, psnr, ssim_loss, ssim_metric
from .model import (
    BilateralSRNet,
    Checkpoint,
    PatchDiscriminator,
    save_checkpoint,
)

TRACKS = ("track1_x4", "track2_stage1", "track2_stage2")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by all tracks.

    `steps` is the absolute target step count: resuming a checkpoint at
    step s trains the remaining steps - s. `halve_at` lists steps where
    the learning rate halves; None derives 50/75/90% of `steps`, [] keeps
    it constant.
    """

    track: str = "track1_x4"
    lambda_l1: float = 1.0
    lambda_gan: float = 0.005
    lambda_ssim: float = 0.1
    learning_rate: float = 2e-4
    batch_size: int = 8
    steps: int = 2000
    halve_at: Optional[tuple[int, ...]] = None
    seed: int = 0
    patch: int = 64
    augment: bool = True
    val_interval: int = 1000

    def __post_init__(self):
        if self.track not in TRACKS:
            raise ValueError(f"track must be one of {TRACKS}, got {self.track!r}")
        if min(self.lambda_l1, self.lambda_gan, self.lambda_ssim) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.steps < 1 or self.patch < 1 or self.val_interval < 1:
            raise ValueError("batch_size, steps, patch, val_interval must be >= 1")
        if self.halve_at is not None:
            object.__setattr__(self, "halve_at", tuple(int(s) for s in self.halve_at))

    def schedule(self) -> tuple[int, ...]:
        if self.halve_at is not None:
            return self.halve_at
        return (self.steps // 2, (3 * self.steps) // 4, (9 * self.steps) // 10)


def _lr_at(cfg: TrainConfig, step: int) -> float:
    halvings = sum(1 for s in cfg.schedule() if step >= s)
    return cfg.learning_rate * (0.5 ** halvings)


def _batch_tensors(pairs: Sequence[PairedSample], cfg: TrainConfig,
                   rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    lr_stack, hr_stack = [], []
    for _ in range(cfg.batch_size):
        sample = pairs[int(rng.integers(0, len(pairs)))]
        sample = random_crop_pair(sample, cfg.patch, rng)
        if cfg.augment:
            sample = augment_pair(sample, rng)
        lr_stack.append(sample.lr.pixels)
        hr_stack.append(sample.hr.pixels)
    lr_t = torch.from_numpy(np.stack(lr_stack)).unsqueeze(1).float()
    hr_t = torch.from_numpy(np.stack(hr_stack)).unsqueeze(1).float()
    return lr_t, hr_t


def _validation_metrics(model: BilateralSRNet, val_pairs: Sequence[PairedSample]) -> tuple[float, float]:
    """Mean PSNR and SSIM of clipped full-image outputs over the held-out set."""
    model.eval()
    psnrs, ssims = [], []
    with torch.no_grad():
        for p in val_pairs:
            sr = infer([model], p.lr)
            psnrs.append(psnr(sr.pixels, p.hr.pixels))
            ssims.append(ssim_metric(sr.pixels, p.hr.pixels))
    model.train()
    return float(np.mean(psnrs)), float(np.mean(ssims))


def _run_training(model: BilateralSRNet, pairs: Sequence[PairedSample], cfg: TrainConfig,
                  discriminator: Optional[PatchDiscriminator] = None,
                  val_pairs: Optional[Sequence[PairedSample]] = None,
                  out_dir=None, log_stream: Optional[TextIO] = None,
                  resume: Optional[Checkpoint] = None,
                  resume_disc: Optional[Checkpoint] = None) -> Checkpoint:
    """Shared optimization loop. Loss terms with zero weight are skipped
    entirely, so their gradient contribution is exactly absent."""
    if not pairs:
        raise ValueError("no training pairs")
    use_gan = cfg.lambda_gan > 0
    if use_gan and discriminator is None:
        raise ValueError("lambda_gan > 0 requires a discriminator")

    model.train()
    gen_opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999))
    disc_opt = None
    if discriminator is not None:
        discriminator.train()
        disc_opt = torch.optim.Adam(discriminator.parameters(), lr=cfg.learning_rate,
                                    betas=(0.9, 0.999))

    rng = np.random.default_rng(cfg.seed)
    start_step = 0
    if resume is not None:
        start_step = resume.step
        if resume.optimizer_state is not None:
            gen_opt.load_state_dict(resume.optimizer_state)
        if resume.rng_state is not None:
            rng.bit_generator.state = resume.rng_state
    if resume_disc is not None and disc_opt is not None and resume_disc.optimizer_state is not None:
        disc_opt.load_state_dict(resume_disc.optimizer_state)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    best_psnr = -np.inf
    t0 = time.monotonic()
    for step in range(start_step, cfg.steps):
        lr_now = _lr_at(cfg, step)
        for group in gen_opt.param_groups:
            group["lr"] = lr_now
        if disc_opt is not None:
            for group in disc_opt.param_groups:
                group["lr"] = lr_now

        lr_t, hr_t = _batch_tensors(pairs, cfg, rng)
        record = {"step": step + 1, "lr": lr_now}

        if use_gan:
            disc_opt.zero_grad()
            with torch.no_grad():
                fake = model(lr_t)
            d_loss = lsgan_d_loss(discriminator(hr_t), discriminator(fake))
            d_loss.backward()
            disc_opt.step()
            record["d"] = d_loss.item()

        gen_opt.zero_grad()
        sr = model(lr_t)
        l1 = l1_loss(sr, hr_t)
        total = cfg.lambda_l1 * l1
        record["l1"] = l1.item()
        if cfg.lambda_ssim > 0:
            s_loss = ssim_loss(sr, hr_t)
            total = total + cfg.lambda_ssim * s_loss
            record["ssim"] = s_loss.item()
        if use_gan:
            g_gan = lsgan_g_loss(discriminator(sr))
            total = total + cfg.lambda_gan * g_gan
            record["g_gan"] = g_gan.item()
        total.backward()
        gen_opt.step()
        record["total"] = total.item()
        record["elapsed"] = round(time.monotonic() - t0, 3)

        if log_stream is not None:
            log_stream.write(json.dumps(record) + "\n")

        done = step + 1 == cfg.steps
        if val_pairs and ((step + 1) % cfg.val_interval == 0 or done):
            val_psnr, val_ssim = _validation_metrics(model, val_pairs)
            if log_stream is not None:
                log_stream.write(json.dumps(
                    {"step": step + 1, "val_psnr": val_psnr, "val_ssim": val_ssim}) + "\n")
            if out_dir is not None and val_psnr > best_psnr:
                best_psnr = val_psnr
                save_checkpoint(out_dir / "ckpt_best.ckpt", model, step + 1, gen_opt,
                                rng.bit_generator.state)

    ckpt = Checkpoint(model=model, config=model.config, step=cfg.steps,
                      optimizer_state=gen_opt.state_dict(),
                      rng_state=rng.bit_generator.state)
    if out_dir is not None:
        save_checkpoint(out_dir / "ckpt_last.ckpt", model, cfg.steps, gen_opt,
                        rng.bit_generator.state)
        if discriminator is not None:
            save_checkpoint(out_dir / "disc_last.ckpt", discriminator, cfg.steps, disc_opt,
                            None)
    return ckpt


def _check_pairs(pairs: Sequence[PairedSample], scale: int, registered: bool) -> None:
    for p in pairs:
        if p.scale != scale:
            raise ValueError(f"expected scale {scale} pairs, got {p.scale}")
        if p.registered != registered:
            raise ValueError(f"expected registered={registered} pairs")


def train_track1(model: BilateralSRNet, pairs: Sequence[PairedSample], cfg: TrainConfig,
                 **loop_kwargs) -> Checkpoint:
    """L1 training on synthetic x4 pairs."""
    if cfg.track != "track1_x4":
        raise ValueError(f"config track is {cfg.track!r}, expected 'track1_x4'")
    if model.config.scale != 4:
        raise ValueError("track-1 model must have scale 4")
    _check_pairs(pairs, scale=4, registered=False)
    cfg = dataclasses.replace(cfg, lambda_gan=0.0, lambda_ssim=0.0)
    return _run_training(model, pairs, cfg, **loop_kwargs)


def train_track2_stage1(model: BilateralSRNet, pairs: Sequence[PairedSample], cfg: TrainConfig,
                        **loop_kwargs) -> Checkpoint:
    """L1 training on synthetic x2 self-pairs."""
    if cfg.track != "track2_stage1":
        raise ValueError(f"config track is {cfg.track!r}, expected 'track2_stage1'")
    if model.config.scale != 2:
        raise ValueError("track-2 model must have scale 2")
    _check_pairs(pairs, scale=2, registered=False)
    cfg = dataclasses.replace(cfg, lambda_gan=0.0, lambda_ssim=0.0)
    return _run_training(model, pairs, cfg, **loop_kwargs)


def train_track2_stage2(model: BilateralSRNet, discriminator: Optional[PatchDiscriminator],
                        pairs: Sequence[PairedSample], cfg: TrainConfig,
                        **loop_kwargs) -> Checkpoint:
    """Adversarial fine-tuning on semi-matched x2 pairs: alternating
    discriminator/generator updates with L1 + LSGAN + SSIM objectives."""
    if cfg.track != "track2_stage2":
        raise ValueError(f"config track is {cfg.track!r}, expected 'track2_stage2'")
    if model.config.scale != 2:
        raise ValueError("track-2 model must have scale 2")
    if cfg.lambda_gan > 0 and discriminator is None:
        raise ValueError("lambda_gan > 0 requires a discriminator")
    _check_pairs(pairs, scale=2, registered=True)
    return _run_training(model, pairs, cfg, discriminator=discriminator, **loop_kwargs)


def infer(models: Sequence[BilateralSRNet], lr: Image) -> Image:
    """Super-resolve one image; with two models, their raw outputs are
    averaged before the final clip to [0, 1]."""
    if not 1 <= len(models) <= 2:
        raise ValueError(f"expected 1 or 2 models, got {len(models)}")
    scales = {m.config.scale for m in models}
    if len(scales) != 1:
        raise ValueError(f"models disagree on scale: {sorted(scales)}")
    x = torch.from_numpy(lr.pixels).float().reshape(1, 1, lr.height, lr.width)
    with torch.no_grad():
        outs = [m(x) for m in models]
    sr = torch.stack(outs).mean(dim=0)
    px = np.clip(sr.squeeze(0).squeeze(0).double().numpy(), 0.0, 1.0)
    return Image(px, lr.source_id)


def _quantize8(px: np.ndarray) -> np.ndarray:
    return np.floor(px * 255.0 + 0.5) / 255.0


def evaluate(sr_dir, gt_dir, shave: int = 0, quantize: bool = False) -> dict:
    """Per-image and mean PSNR/SSIM between matching basenames of two dirs.

    Files lacking a counterpart are listed in the report and excluded
    from the means.
    """
    sr_dir, gt_dir = Path(sr_dir), Path(gt_dir)
    sr_files = {p.name: p for p in sorted(sr_dir.glob("*.png"))}
    gt_files = {p.name: p for p in sorted(gt_dir.glob("*.png"))}
    matched = sorted(set(sr_files) & set(gt_files))

    rows = []
    for name in matched:
        sr = load_image(sr_files[name]).pixels
        gt = load_image(gt_files[name]).pixels
        if quantize:
            sr, gt = _quantize8(sr), _quantize8(gt)
        if shave > 0:
            sr = sr[shave:-shave, shave:-shave]
            gt = gt[shave:-shave, shave:-shave]
        rows.append({"name": name, "psnr": psnr(sr, gt), "ssim": ssim_metric(sr, gt)})

    report = {
        "images": rows,
        "count": len(rows),
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])) if rows else None,
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])) if rows else None,
        "missing_gt": sorted(set(sr_files) - set(gt_files)),
        "missing_sr": sorted(set(gt_files) - set(sr_files)),
        "options": {"shave": shave, "quantize": quantize},
    }
    return report


def format_report(report: dict) -> str:
    """Human-readable metrics table."""
    lines = [f"{'image':<32} {'PSNR(dB)':>10} {'SSIM':>8}"]
    for row in report["images"]:
        lines.append(f"{row['name']:<32} {row['psnr']:>10.2f} {row['ssim']:>8.4f}")
    if report["count"]:
        lines.append(f"{'mean':<32} {report['mean_psnr']:>10.2f} {report['mean_ssim']:>8.4f}")
    else:
        lines.append("no matched image pairs")
    for name in report["missing_gt"]:
        lines.append(f"warning: no ground truth for {name} (excluded)")
    for name in report["missing_sr"]:
        lines.append(f"warning: no super-resolved output for {name} (excluded)")
    return "\n".join(lines)
