"""Loss functions: per-level pixel MSE, adversarial variants, and the
level-weighted multi-scale generator objective.

The generator total is sum_i lambda_i * (adv_i + w * mse_i), where adv_i is
the chosen adversarial generator loss on the level-i score map and mse_i is
the pixel MSE between the predicted and target pyramid levels.  Expectations
are realized as means over batch x score-map elements.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn.functional as F


class AdversarialVariant(str, Enum):
    LSGAN = "lsgan"
    WGAN = "wgan"
    WGAN_SOFTPLUS = "wgan_softplus"
    HINGE = "hinge"


@dataclass(frozen=True)
class LossWeights:
    """Per-level weights lambda_i plus the reconstruction weight w."""

    lambdas: tuple[float, ...] = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    w: float = 4.5e3

    def __post_init__(self):
        lambdas = tuple(float(l) for l in self.lambdas)
        object.__setattr__(self, "lambdas", lambdas)
        if len(lambdas) == 0:
            raise ValueError("lambdas must not be empty")
        if any(l < 0 for l in lambdas):
            raise ValueError(f"lambdas must be >= 0, got {lambdas}")
        if not any(l > 0 for l in lambdas):
            raise ValueError("at least one lambda must be > 0")
        if self.w < 0:
            raise ValueError(f"w must be >= 0, got {self.w}")

    @property
    def active_levels(self) -> list[int]:
        return [i for i, l in enumerate(self.lambdas) if l > 0]


def mse_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over all elements of (predicted - target)^2."""
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(predicted.shape)} vs {tuple(target.shape)}")
    return ((predicted - target) ** 2).mean()


def lsgan_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2)."""
    return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores ** 2).mean()


def lsgan_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """0.5 * mean((fake - 1)^2)."""
    return 0.5 * ((fake_scores - 1.0) ** 2).mean()


def wgan_losses(real_scores: torch.Tensor, fake_scores: torch.Tensor):
    """Wasserstein critic/generator pair (clipping handled by the trainer)."""
    d = fake_scores.mean() - real_scores.mean()
    g = -fake_scores.mean()
    return d, g


def hinge_losses(real_scores: torch.Tensor, fake_scores: torch.Tensor):
    d = F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()
    g = -fake_scores.mean()
    return d, g


def wgan_softplus_losses(real_scores: torch.Tensor, fake_scores: torch.Tensor):
    d = F.softplus(-real_scores).mean() + F.softplus(fake_scores).mean()
    g = F.softplus(-fake_scores).mean()
    return d, g


def adversarial_d_loss(
    variant: AdversarialVariant, real_scores: torch.Tensor, fake_scores: torch.Tensor
) -> torch.Tensor:
    variant = AdversarialVariant(variant)
    if variant is AdversarialVariant.LSGAN:
        return lsgan_d_loss(real_scores, fake_scores)
    if variant is AdversarialVariant.WGAN:
        return wgan_losses(real_scores, fake_scores)[0]
    if variant is AdversarialVariant.HINGE:
        return hinge_losses(real_scores, fake_scores)[0]
    return wgan_softplus_losses(real_scores, fake_scores)[0]


def adversarial_g_loss(variant: AdversarialVariant, fake_scores: torch.Tensor) -> torch.Tensor:
    variant = AdversarialVariant(variant)
    if variant is AdversarialVariant.LSGAN:
        return lsgan_g_loss(fake_scores)
    if variant is AdversarialVariant.WGAN or variant is AdversarialVariant.HINGE:
        return -fake_scores.mean()
    return F.softplus(-fake_scores).mean()


@dataclass
class LevelBreakdown:
    """Per-level loss components, detached for logging."""

    level: int
    lam: float
    adv: float
    mse: float
    weighted: float

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "lambda": self.lam,
            "adv": self.adv,
            "mse": self.mse,
            "weighted": self.weighted,
        }


def laploss_generator_total(
    fake_score_maps: list,
    predicted_pyramid: list,
    target_pyramid: list,
    weights: LossWeights,
    variant: AdversarialVariant = AdversarialVariant.LSGAN,
):
    """Total generator loss plus a per-level breakdown.

    `fake_score_maps[i]` may be None only when lambda_i == 0; a zero-weight
    level contributes neither its adversarial nor its MSE term.
    Returns (total, breakdown) with `total` a differentiable scalar.
    """
    n = len(weights.lambdas)
    if not (len(fake_score_maps) == len(predicted_pyramid) == len(target_pyramid) == n):
        raise ValueError(
            "level count mismatch: "
            f"scores={len(fake_score_maps)} predicted={len(predicted_pyramid)} "
            f"target={len(target_pyramid)} lambdas={n}"
        )
    total = None
    breakdown = []
    for i, lam in enumerate(weights.lambdas):
        if lam == 0:
            breakdown.append(LevelBreakdown(i, 0.0, 0.0, 0.0, 0.0))
            continue
        if fake_score_maps[i] is None:
            raise ValueError(f"missing score map for active level {i}")
        adv = adversarial_g_loss(variant, fake_score_maps[i])
        mse = mse_loss(predicted_pyramid[i], target_pyramid[i])
        term = lam * (adv + weights.w * mse)
        total = term if total is None else total + term
        breakdown.append(
            LevelBreakdown(i, lam, adv.detach().item(), mse.detach().item(), term.detach().item())
        )
    return total, breakdown


def laploss_discriminator_total(
    level: int,
    real_scores: torch.Tensor,
    fake_scores: torch.Tensor,
    variant: AdversarialVariant = AdversarialVariant.LSGAN,
) -> torch.Tensor:
    """Discriminator loss for one level; each level trains independently."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    return adversarial_d_loss(variant, real_scores, fake_scores)
