"""Thermal image super-resolution toolkit.

A two-branch channel-splitting transformer generator with the full data
pipeline around it: synthetic degradation, cross-camera registration,
adversarial training, ensemble inference, and PSNR/SSIM evaluation.
"""

__version__ = "0.1.0"

from .data import PairedSample, augment_pair, load_pairs, random_crop_pair
from .degradation import DegradationConfig, add_awgn, bicubic_resample, make_lr
from .images import Image, load_image, save_image
from .losses import (
    SsimParams,
    l1_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    psnr,
    ssim,
    ssim_loss,
    ssim_metric,
)
from .model import (
    BilateralSRNet,
    Checkpoint,
    CheckpointError,
    DiscriminatorConfig,
    ModelConfig,
    PatchDiscriminator,
    build_discriminator,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .registration import (
    Correspondence,
    Homography,
    RegistrationConfig,
    RegistrationError,
    detect_and_match,
    estimate_homography_dlt,
    ransac_homography,
    register_pair,
    warp_to_reference,
)
from .training import (
    TrainConfig,
    evaluate,
    infer,
    train_track1,
    train_track2_stage1,
    train_track2_stage2,
)
