"""Command-line entry point: degrade, register, train, infer, evaluate.

All randomness flows from explicit seeds, so every command is
reproducible byte-for-byte (log timestamps aside). Logs go to stderr,
data artifacts to files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_pairs, write_manifest
from .degradation import DegradationConfig, make_lr
from .images import load_image, save_image
from .model import (
    BilateralSRNet,
    DiscriminatorConfig,
    ModelConfig,
    build_discriminator,
    build_model,
    load_checkpoint,
)
from .registration import RegistrationConfig, RegistrationError, register_pair_detailed
from .training import (
    TrainConfig,
    evaluate,
    format_report,
    infer,
    train_track1,
    train_track2_stage1,
    train_track2_stage2,
)

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for malformed run configuration documents."""


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _dataclass_from(section: str, cls, doc: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown config key: {section}.{key}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {section} config: {e}") from e


def load_run_config(path) -> dict:
    """Parse and validate a run configuration JSON document.

    Sections: model (ModelConfig), train (TrainConfig), optional
    discriminator (DiscriminatorConfig), data {train_manifest,
    val_manifest}, out_dir. Unknown keys anywhere are rejected.
    """
    doc = json.loads(Path(path).read_text())
    allowed = {"model", "train", "discriminator", "data", "out_dir"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {key}")
    for section in ("model", "train", "data"):
        if section not in doc:
            raise ConfigError(f"missing config section: {section}")
    data = doc["data"]
    for key in data:
        if key not in {"train_manifest", "val_manifest"}:
            raise ConfigError(f"unknown config key: data.{key}")
    if "train_manifest" not in data:
        raise ConfigError("missing config key: data.train_manifest")
    cfg = {
        "model": _dataclass_from("model", ModelConfig, doc["model"]),
        "train": _dataclass_from("train", TrainConfig, doc["train"]),
        "discriminator": (_dataclass_from("discriminator", DiscriminatorConfig,
                                          doc["discriminator"])
                          if "discriminator" in doc else None),
        "train_manifest": data["train_manifest"],
        "val_manifest": data.get("val_manifest"),
        "out_dir": doc.get("out_dir"),
    }
    return cfg


def cmd_degrade(args) -> int:
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    files = sorted(in_dir.glob("*.png"))
    if not files:
        _log(f"error: no PNG images found in {in_dir}")
        return 1
    (out_dir / "lr").mkdir(parents=True, exist_ok=True)
    (out_dir / "hr").mkdir(parents=True, exist_ok=True)
    cfg = DegradationConfig(scale=args.scale, noise_sigma=args.sigma, seed=args.seed)
    entries = []
    for i, path in enumerate(files):
        rng = np.random.default_rng(cfg.seed ^ i)
        pair = make_lr(load_image(path), cfg, rng)
        save_image(pair.lr, out_dir / "lr" / path.name)
        save_image(pair.hr, out_dir / "hr" / path.name)
        entries.append({"lr": f"lr/{path.name}", "hr": f"hr/{path.name}",
                        "scale": cfg.scale, "registered": False})
        _log(f"degraded {path.name}: {pair.hr.height}x{pair.hr.width} -> "
             f"{pair.lr.height}x{pair.lr.width}")
    write_manifest(out_dir / "manifest.json", entries)
    return 0


def cmd_register(args) -> int:
    axis_dir, flir_dir, out_dir = Path(args.axis), Path(args.flir), Path(args.out_dir)
    names = sorted({p.name for p in axis_dir.glob("*.png")}
                   & {p.name for p in flir_dir.glob("*.png")})
    if not names:
        _log("error: no pairs found (no matching basenames)")
        return 1
    (out_dir / "lr").mkdir(parents=True, exist_ok=True)
    (out_dir / "hr").mkdir(parents=True, exist_ok=True)
    entries, homographies, failures = [], {}, {}
    for i, name in enumerate(names):
        cfg = RegistrationConfig(threshold_px=args.threshold, max_iters=args.iters,
                                 seed=args.seed ^ i)
        try:
            moving = load_image(axis_dir / name)
            reference = load_image(flir_dir / name)
            pair, hom = register_pair_detailed(moving, reference, cfg)
        except (RegistrationError, ValueError) as e:
            failures[name] = str(e)
            _log(f"failed {name}: {e}")
            continue
        save_image(pair.lr, out_dir / "lr" / name)
        save_image(pair.hr, out_dir / "hr" / name)
        homographies[name] = [float(v) for v in hom.h.reshape(-1)]
        entries.append({"lr": f"lr/{name}", "hr": f"hr/{name}",
                        "scale": 2, "registered": True})
        _log(f"registered {name}")
    manifest = {
        "settings": {"threshold": args.threshold, "iters": args.iters, "seed": args.seed},
        "pairs": entries,
    }
    write_manifest(out_dir / "manifest.json", entries)
    (out_dir / "registration.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out_dir / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
    (out_dir / "homographies.json").write_text(json.dumps(homographies, indent=2) + "\n")
    return 0 if entries else 1


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.steps is not None:
        cfg["train"] = dataclasses.replace(cfg["train"], steps=args.steps)
    if args.seed is not None:
        cfg["train"] = dataclasses.replace(cfg["train"], seed=args.seed)
    if args.out is not None:
        cfg["out_dir"] = args.out

    base = Path(args.config).parent
    manifest = Path(cfg["train_manifest"])
    if not manifest.is_absolute():
        manifest = base / manifest
    pairs = load_pairs(manifest)
    val_pairs = None
    if cfg["val_manifest"]:
        val_manifest = Path(cfg["val_manifest"])
        if not val_manifest.is_absolute():
            val_manifest = base / val_manifest
        val_pairs = load_pairs(val_manifest)

    out_dir = Path(cfg["out_dir"]) if cfg["out_dir"] else None
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        if dataclasses.asdict(resume.config) != dataclasses.asdict(cfg["model"]):
            raise ConfigError("resume checkpoint config does not match run config model section")
        model = resume.model
        _log(f"resuming from {args.resume} at step {resume.step}")
    else:
        model = build_model(cfg["model"])

    track = cfg["train"].track
    log_stream = None
    try:
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            log_stream = open(out_dir / "train_log.jsonl", "a")
        kwargs = dict(val_pairs=val_pairs, out_dir=out_dir, log_stream=log_stream,
                      resume=resume)
        if track == "track1_x4":
            ckpt = train_track1(model, pairs, cfg["train"], **kwargs)
        elif track == "track2_stage1":
            ckpt = train_track2_stage1(model, pairs, cfg["train"], **kwargs)
        else:
            disc_cfg = cfg["discriminator"] or DiscriminatorConfig()
            resume_disc = None
            if args.resume:
                disc_path = Path(args.resume).parent / "disc_last.ckpt"
                if disc_path.exists():
                    resume_disc = load_checkpoint(disc_path)
                    _log(f"resuming discriminator from {disc_path}")
            disc = resume_disc.model if resume_disc else build_discriminator(disc_cfg)
            ckpt = train_track2_stage2(model, disc, pairs, cfg["train"],
                                       resume_disc=resume_disc, **kwargs)
    finally:
        if log_stream is not None:
            log_stream.close()
    _log(f"training finished at step {ckpt.step}")
    if out_dir is None:
        _log("warning: no out_dir configured, checkpoint not written")
    return 0


def cmd_infer(args) -> int:
    models = []
    for ckpt_path in args.ckpt:
        ckpt = load_checkpoint(ckpt_path)
        if not isinstance(ckpt.model, BilateralSRNet):
            _log(f"error: {ckpt_path} is not a generator checkpoint")
            return 1
        ckpt.model.eval()
        models.append(ckpt.model)
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    files = sorted(in_dir.glob("*.png"))
    if not files:
        _log(f"error: no PNG images found in {in_dir}")
        return 1
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in files:
        sr = infer(models, load_image(path))
        save_image(sr, out_dir / path.name, bitdepth=args.bitdepth)
        _log(f"super-resolved {path.name} -> {sr.height}x{sr.width}")
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate(args.sr, args.gt, shave=args.shave, quantize=args.quantize)
    print(format_report(report))
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2) + "\n")
    return 0 if report["count"] > 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermosr",
        description="Thermal image super-resolution pipeline",
    )
    parser.add_argument("--version", action="version",
                        version=f"thermosr {__version__} (config schema v{CONFIG_SCHEMA_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="synthesize LR images from an HR directory")
    p.add_argument("--scale", type=int, choices=(2, 4), required=True)
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("register", help="register moving/reference image pairs")
    p.add_argument("--axis", required=True, help="moving (medium-res) image directory")
    p.add_argument("--flir", required=True, help="reference (high-res) image directory")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--threshold", type=float, default=3.0)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--steps", type=int, default=None, help="override train.steps")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--out", default=None, help="override out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve a directory of images")
    p.add_argument("--ckpt", action="append", required=True,
                   help="checkpoint path (repeat for a two-model ensemble)")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--bitdepth", type=int, choices=(8, 16), default=8)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="PSNR/SSIM between two directories")
    p.add_argument("--sr", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--shave", type=int, default=0)
    p.add_argument("--quantize", action="store_true")
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _log(f"config error: {e}")
        return 2
    except (OSError, ValueError, RuntimeError) as e:
        _log(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
