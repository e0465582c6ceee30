"""Multi-scale adversarial training on Laplacian pyramids."""

from .losses import (
    AdversarialVariant,
    LossWeights,
    hinge_losses,
    laploss_discriminator_total,
    laploss_generator_total,
    lsgan_d_loss,
    lsgan_g_loss,
    mse_loss,
    wgan_losses,
    wgan_softplus_losses,
)
from .metrics import EvalConfig, MetricReport, enhance_image, evaluate_dataset, psnr, ssim
from .models import (
    GeneratorSpec,
    build_discriminators,
    build_generator,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .pyramid import decompose, downsample, gaussian_blur, reconstruct, upsample
from .trainer import TrainConfig, TrainState, TrainingAborted, ablation_run, fit, train_step

__version__ = "0.1.0"

__all__ = [
    "AdversarialVariant",
    "EvalConfig",
    "GeneratorSpec",
    "LossWeights",
    "MetricReport",
    "TrainConfig",
    "TrainState",
    "TrainingAborted",
    "ablation_run",
    "build_discriminators",
    "build_generator",
    "count_parameters",
    "decompose",
    "downsample",
    "enhance_image",
    "evaluate_dataset",
    "fit",
    "gaussian_blur",
    "hinge_losses",
    "laploss_discriminator_total",
    "laploss_generator_total",
    "load_checkpoint",
    "lsgan_d_loss",
    "lsgan_g_loss",
    "mse_loss",
    "psnr",
    "reconstruct",
    "save_checkpoint",
    "ssim",
    "train_step",
    "upsample",
    "wgan_losses",
    "wgan_softplus_losses",
]
