"""Adversarial training loop for the pyramid translation network.

One step runs, in order: decompose the input and ground-truth batches into
pyramids; generator forward; per active level, one discriminator update on
(real level, detached predicted level); then one generator update against
freshly computed scores.  Zero-weight levels are skipped entirely, so their
discriminators never see gradients.  All randomness (batch order,
augmentation) is derived statelessly from (seed, step), which makes resumed
runs follow the identical trajectory.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import models, pyramid
from .data import AugmentationConfig, augment, epoch_permutation, load_batch
from .losses import (
    AdversarialVariant,
    LossWeights,
    laploss_discriminator_total,
    laploss_generator_total,
)
from .metrics import EvalConfig, evaluate_dataset
from .models import GeneratorSpec
from .soap import SOAP

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class TrainingAborted(RuntimeError):
    """Raised when a loss goes non-finite; carries a diagnostic dump."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class TrainConfig:
    generator_spec: GeneratorSpec = field(default_factory=GeneratorSpec)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    variant: AdversarialVariant = AdversarialVariant.LSGAN
    lr_generator: float = 1e-3
    lr_discriminator: float = 1e-3
    optimizer_generator: str = "adam"  # "adam" or "soap"
    adam_betas: tuple = (0.9, 0.999)
    weight_decay: float = 1e-2  # AdamW, discriminators only
    batch_size: int = 8
    steps: int = 300
    seed: int = 0
    checkpoint_interval: int = 0  # 0 disables
    eval_interval: int = 0
    dtype: str = "float32"
    disc_base_width: int = 64
    wgan_clip: float = 0.01
    augment: AugmentationConfig | None = None
    image_hw: tuple | None = None

    def validate(self) -> None:
        self.generator_spec.validate()
        if len(self.loss_weights.lambdas) != self.generator_spec.level_count:
            raise ValueError(
                f"{len(self.loss_weights.lambdas)} lambdas for "
                f"{self.generator_spec.level_count} pyramid levels"
            )
        if self.lr_generator < 0 or self.lr_discriminator < 0:
            raise ValueError("learning rates must be >= 0")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype}")
        if self.optimizer_generator not in ("adam", "soap"):
            raise ValueError(f"optimizer_generator must be adam|soap, got {self.optimizer_generator}")
        AdversarialVariant(self.variant)

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = AdversarialVariant(self.variant).value
        d["generator_spec"] = self.generator_spec.to_dict()
        d["loss_weights"] = {"lambdas": list(self.loss_weights.lambdas), "w": self.loss_weights.w}
        d["augment"] = dataclasses.asdict(self.augment) if self.augment else None
        d["adam_betas"] = list(self.adam_betas)
        d["image_hw"] = list(self.image_hw) if self.image_hw else None
        return d


@dataclass
class TrainState:
    config: TrainConfig
    generator: models.Generator
    discriminators: models.LevelDiscriminators
    g_opt: torch.optim.Optimizer
    d_opts: list
    step: int = 0
    best: dict | None = None


def init_state(config: TrainConfig) -> TrainState:
    config.validate()
    dtype = config.torch_dtype
    g = models.build_generator(config.generator_spec, config.seed, dtype=dtype)
    d = models.build_discriminators(
        config.generator_spec.level_count,
        seed=config.seed + 1,
        base_width=config.disc_base_width,
        image_hw=config.image_hw,
        dtype=dtype,
    )
    if config.optimizer_generator == "soap":
        g_opt = SOAP(g.parameters(), lr=config.lr_generator, betas=config.adam_betas)
    else:
        g_opt = torch.optim.Adam(g.parameters(), lr=config.lr_generator, betas=config.adam_betas)
    d_opts = [
        torch.optim.AdamW(
            ld.parameters(),
            lr=config.lr_discriminator,
            betas=config.adam_betas,
            weight_decay=config.weight_decay,
        )
        for ld in d.discriminators
    ]
    return TrainState(config, g, d, g_opt, d_opts)


def _to_network(batch01: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(batch01.transpose(0, 3, 1, 2))).to(dtype)
    return t * 2.0 - 1.0


def _require_finite(value: float, what: str, diagnostics: dict) -> None:
    if not math.isfinite(value):
        raise TrainingAborted(
            f"{what} is non-finite ({value}); per-level dump: {json.dumps(diagnostics)}",
            diagnostics,
        )


def train_step(state: TrainState, batch) -> dict:
    """One discriminator pass per active level followed by one generator pass."""
    cfg = state.config
    inputs, targets = batch
    x = _to_network(inputs, cfg.torch_dtype)
    y = _to_network(targets, cfg.torch_dtype)
    levels = cfg.generator_spec.level_count
    in_pyr = pyramid.decompose(x, levels)
    tgt_pyr = pyramid.decompose(y, levels)
    pred_pyr = state.generator(in_pyr)

    d_losses = {}
    for i, lam in enumerate(cfg.loss_weights.lambdas):
        if lam == 0:
            continue
        opt = state.d_opts[i]
        opt.zero_grad(set_to_none=True)
        real_scores = state.discriminators(i, tgt_pyr[i])
        fake_scores = state.discriminators(i, pred_pyr[i].detach())
        d_loss = laploss_discriminator_total(i, real_scores, fake_scores, cfg.variant)
        _require_finite(d_loss.item(), f"discriminator loss at level {i}", {"level": i, "d_losses": d_losses})
        d_loss.backward()
        opt.step()
        if AdversarialVariant(cfg.variant) is AdversarialVariant.WGAN:
            with torch.no_grad():
                for p in state.discriminators.discriminators[i].parameters():
                    p.clamp_(-cfg.wgan_clip, cfg.wgan_clip)
        d_losses[i] = d_loss.item()

    state.g_opt.zero_grad(set_to_none=True)
    fake_maps = [
        state.discriminators(i, pred_pyr[i]) if lam > 0 else None
        for i, lam in enumerate(cfg.loss_weights.lambdas)
    ]
    total, breakdown = laploss_generator_total(
        fake_maps, pred_pyr, tgt_pyr, cfg.loss_weights, cfg.variant
    )
    diagnostics = {"levels": [b.to_dict() for b in breakdown], "d_losses": d_losses}
    _require_finite(total.item(), "generator total loss", diagnostics)
    total.backward()
    state.g_opt.step()
    state.step += 1
    return {
        "step": state.step,
        "total": total.item(),
        "levels": [b.to_dict() for b in breakdown],
        "d_losses": d_losses,
    }


def generator_loss_on_batch(state: TrainState, batch) -> float:
    """The weighted generator total on a batch, with no parameter updates."""
    cfg = state.config
    x = _to_network(batch[0], cfg.torch_dtype)
    y = _to_network(batch[1], cfg.torch_dtype)
    with torch.no_grad():
        in_pyr = pyramid.decompose(x, cfg.generator_spec.level_count)
        tgt_pyr = pyramid.decompose(y, cfg.generator_spec.level_count)
        pred_pyr = state.generator(in_pyr)
        fake_maps = [
            state.discriminators(i, pred_pyr[i]) if lam > 0 else None
            for i, lam in enumerate(cfg.loss_weights.lambdas)
        ]
        total, _ = laploss_generator_total(fake_maps, pred_pyr, tgt_pyr, cfg.loss_weights, cfg.variant)
    return total.item()


def _batch_for_step(dataset, cfg: TrainConfig, step: int):
    n = len(dataset)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    epoch, pos = divmod(step, steps_per_epoch)
    perm = epoch_permutation(n, cfg.seed, epoch)
    idx = perm[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
    inputs, targets = load_batch(dataset, idx)
    if cfg.augment is not None:
        aug_in, aug_tgt = [], []
        for j in range(inputs.shape[0]):
            rng = np.random.default_rng([cfg.augment.seed, cfg.seed, step, j])
            a, b = augment(inputs[j], targets[j], cfg.augment, rng=rng)
            aug_in.append(a)
            aug_tgt.append(b)
        inputs, targets = np.stack(aug_in), np.stack(aug_tgt)
    return inputs, targets


def save_training_checkpoint(state: TrainState, directory) -> Path:
    directory = Path(directory)
    models.save_checkpoint(directory, state.generator, state.config.seed, state.step)
    torch.save(
        {
            "step": state.step,
            "discriminators": state.discriminators.state_dict(),
            "g_opt": state.g_opt.state_dict(),
            "d_opts": [o.state_dict() for o in state.d_opts],
            "best": state.best,
        },
        directory / "training_state.pt",
    )
    return directory


def load_training_checkpoint(config: TrainConfig, directory) -> TrainState:
    directory = Path(directory)
    generator, sidecar = models.load_checkpoint(
        directory, expected_spec=config.generator_spec, dtype=config.torch_dtype
    )
    state = init_state(config)
    state.generator.load_state_dict(generator.state_dict())
    extra_path = directory / "training_state.pt"
    if not extra_path.is_file():
        raise FileNotFoundError(f"missing training_state.pt in {directory}")
    extra = torch.load(extra_path, map_location="cpu", weights_only=True)
    state.discriminators.load_state_dict(extra["discriminators"])
    state.g_opt.load_state_dict(extra["g_opt"])
    for opt, sd in zip(state.d_opts, extra["d_opts"]):
        opt.load_state_dict(sd)
    state.step = int(extra["step"])
    state.best = extra.get("best")
    return state


class _EventLog:
    def __init__(self, path: Path | None, append: bool):
        self.path = path
        if path is not None and not append:
            path.write_text("")

    def write(self, record: dict) -> None:
        if self.path is None:
            return
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record) + "\n")


def _evaluate(state: TrainState, eval_data, name: str):
    report = evaluate_dataset(
        state.generator,
        eval_data,
        EvalConfig(level_count=state.config.generator_spec.level_count, dataset_name=name),
    )
    return report


def fit(
    config: TrainConfig,
    train_data,
    eval_data=None,
    out_dir=None,
    resume_from=None,
):
    """Run the configured horizon; returns (state, eval history)."""
    config.validate()
    if len(train_data) == 0:
        raise ValueError("training dataset is empty")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        state = load_training_checkpoint(config, resume_from)
    else:
        state = init_state(config)
    log = _EventLog(out_dir / "events.jsonl" if out_dir else None, append=resume_from is not None)
    history = []

    def run_eval():
        report = _evaluate(state, eval_data, "eval")
        entry = {
            "step": state.step,
            "mean_psnr": None if math.isinf(report.mean_psnr) else report.mean_psnr,
            "mean_ssim": report.mean_ssim,
            "n_psnr_infinite": report.n_psnr_infinite,
        }
        history.append(entry)
        log.write({"kind": "eval", **entry})
        if not math.isinf(report.mean_psnr):
            if state.best is None or report.mean_psnr > state.best["mean_psnr"]:
                state.best = {"step": state.step, "mean_psnr": report.mean_psnr, "mean_ssim": report.mean_ssim}
        return report

    while state.step < config.steps:
        batch = _batch_for_step(train_data, config, state.step)
        t0 = time.monotonic()
        record = train_step(state, batch)
        record.update(
            kind="step",
            lr_g=config.lr_generator,
            lr_d=config.lr_discriminator,
            lambdas=list(config.loss_weights.lambdas),
            seconds=round(time.monotonic() - t0, 4),
            time=time.time(),
        )
        log.write(record)
        if eval_data is not None and config.eval_interval and state.step % config.eval_interval == 0:
            run_eval()
        if out_dir is not None and config.checkpoint_interval and state.step % config.checkpoint_interval == 0:
            save_training_checkpoint(state, out_dir / "checkpoints" / f"step_{state.step:06d}")

    if eval_data is not None and config.steps > 0 and (not history or history[-1]["step"] != state.step):
        run_eval()
    if out_dir is not None:
        save_training_checkpoint(state, out_dir / "checkpoints" / "final")
        report_doc = {
            "config": config.to_dict(),
            "steps_completed": state.step,
            "history": history,
            "best": state.best,
            "final": history[-1] if history else None,
        }
        (out_dir / "report.json").write_text(json.dumps(report_doc, indent=2))
    return state, history


def ablation_run(base_config: TrainConfig, lambda_grid, train_data, eval_sets: dict):
    """Train once per lambda setting and score every test subset.

    Returns one row per grid cell; a failing cell is recorded with its error
    instead of aborting the remaining cells.
    """
    rows = []
    for lambdas in lambda_grid:
        row = {
            "levels": [i for i, l in enumerate(lambdas) if l > 0],
            "weights": list(lambdas),
        }
        try:
            config = dataclasses.replace(
                base_config,
                loss_weights=LossWeights(lambdas=tuple(lambdas), w=base_config.loss_weights.w),
            )
            state, _ = fit(config, train_data)
            row["psnr"], row["ssim"] = {}, {}
            for name, data in eval_sets.items():
                report = _evaluate(state, data, name)
                row["psnr"][name] = report.mean_psnr
                row["ssim"][name] = report.mean_ssim
        except Exception as exc:  # per-cell isolation
            row["error"] = str(exc)
        rows.append(row)
    return rows


def flag_best_row(rows) -> int:
    """Index of the row with the best mean PSNR across subsets."""
    best_idx, best_val = -1, -math.inf
    for i, row in enumerate(rows):
        if "error" in row or not row.get("psnr"):
            continue
        vals = [v for v in row["psnr"].values() if not math.isinf(v)]
        if not vals:
            continue
        mean = sum(vals) / len(vals)
        if mean > best_val:
            best_idx, best_val = i, mean
    return best_idx


def format_ablation_table(rows) -> str:
    subsets = []
    for row in rows:
        for name in row.get("psnr", {}):
            if name not in subsets:
                subsets.append(name)
    best = flag_best_row(rows)
    header = f"{'Levels':<12s} {'Weights':<24s} " + " ".join(f"{s:>18s}" for s in subsets)
    lines = [header]
    for i, row in enumerate(rows):
        mark = "*" if i == best else " "
        weights = "[" + ", ".join(f"{w:.3g}" for w in row["weights"]) + "]"
        cells = []
        for s in subsets:
            if "error" in row:
                cells.append(f"{'error':>18s}")
            else:
                cells.append(f"{row['psnr'][s]:>8.2f}/{row['ssim'][s]:<9.4f}")
        lines.append(f"{mark}{str(row['levels']):<11s} {weights:<24s} " + " ".join(cells))
    return "\n".join(lines)
