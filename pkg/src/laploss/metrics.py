"""PSNR and SSIM evaluation, per image and aggregated over a dataset.

Metrics are computed on (H, W, 3) arrays in [0, 1] after the enhanced image
has been denormalized.  SSIM is computed per channel with an 11x11 Gaussian
window (sigma 1.5, K1=0.01, K2=0.03) over fully interior windows, then
averaged over channels; identical inputs give PSNR = +inf, which is kept as
a sentinel and excluded from dataset means.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from . import pyramid

_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5
_K1 = 0.01
_K2 = 0.03


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """10 * log10(range^2 / mse); +inf sentinel for identical images.

    MSE below (1e-6 * range)^2 counts as identical: that is the float32
    reconstruction noise floor, far beyond 8-bit image precision.
    """
    _check_pair(a, b)
    if data_range <= 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse <= (1e-6 * data_range) ** 2:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def _ssim_window() -> np.ndarray:
    offsets = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
    g = np.exp(-(offsets ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _local_mean(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    # interior of a full correlation == stats over fully contained windows
    r = _SSIM_RADIUS
    return ndimage.correlate(x, win, mode="constant")[r:-r, r:-r]


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Single-scale SSIM, per channel, averaged over the valid window map."""
    _check_pair(a, b)
    if data_range <= 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    if min(a.shape[0], a.shape[1]) < 2 * _SSIM_RADIUS + 1:
        raise ValueError(f"images must be at least 11x11, got {a.shape[:2]}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    win = _ssim_window()
    c1 = (_K1 * data_range) ** 2
    c2 = (_K2 * data_range) ** 2
    channel_means = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx = _local_mean(x, win)
        my = _local_mean(y, win)
        vx = _local_mean(x * x, win) - mx * mx
        vy = _local_mean(y * y, win) - my * my
        cxy = _local_mean(x * y, win) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx ** 2 + my ** 2 + c1) * (vx + vy + c2)
        channel_means.append(np.mean(num / den))
    return float(np.mean(channel_means))


@dataclass
class ImageScore:
    image_id: str
    psnr: float
    ssim: float

    def to_dict(self) -> dict:
        infinite = math.isinf(self.psnr)
        return {
            "id": self.image_id,
            "psnr": None if infinite else self.psnr,
            "psnr_infinite": infinite,
            "ssim": self.ssim,
        }


@dataclass
class MetricReport:
    dataset_name: str
    per_image: list[ImageScore] = field(default_factory=list)

    @property
    def finite_psnrs(self) -> list[float]:
        return [s.psnr for s in self.per_image if not math.isinf(s.psnr)]

    @property
    def n_psnr_infinite(self) -> int:
        return sum(1 for s in self.per_image if math.isinf(s.psnr))

    @property
    def mean_psnr(self) -> float:
        vals = self.finite_psnrs
        return float(np.mean(vals)) if vals else math.inf

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.per_image]))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset_name,
            "count": len(self.per_image),
            "mean_psnr": None if math.isinf(self.mean_psnr) else self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "n_psnr_infinite": self.n_psnr_infinite,
            "per_image": [s.to_dict() for s in self.per_image],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "psnr", "ssim"])
            for s in self.per_image:
                writer.writerow([s.image_id, "" if math.isinf(s.psnr) else f"{s.psnr:.6f}", f"{s.ssim:.6f}"])

    def format_row(self) -> str:
        p = "inf" if math.isinf(self.mean_psnr) else f"{self.mean_psnr:.2f}"
        return f"{self.dataset_name:<16s} {p:>8s} {self.mean_ssim:>8.4f}"


def format_table(reports: list[MetricReport]) -> str:
    lines = [f"{'Split':<16s} {'PSNR':>8s} {'SSIM':>8s}"]
    lines.extend(r.format_row() for r in reports)
    return "\n".join(lines)


def enhance_image(model, image01: np.ndarray, level_count: int = 3) -> np.ndarray:
    """Run one [0,1] HWC image through decompose -> model -> reconstruct.

    `model` is a pyramid -> pyramid callable (normally a Generator); the
    result is denormalized and clipped back to [0, 1].
    """
    dtype = torch.float32
    is_module = isinstance(model, torch.nn.Module)
    if is_module:
        dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(image01.transpose(2, 0, 1)))[None].to(dtype)
    x = x * 2.0 - 1.0
    with torch.no_grad():
        in_pyr = pyramid.decompose(x, level_count)
        out_pyr = model(in_pyr)
        recon = pyramid.reconstruct(out_pyr)
    out = (recon[0].cpu().numpy().transpose(1, 2, 0) + 1.0) / 2.0
    return np.clip(out, 0.0, 1.0).astype(np.float64)


@dataclass
class EvalConfig:
    level_count: int = 3
    data_range: float = 1.0
    dataset_name: str = "eval"


def evaluate_dataset(model, dataset, cfg: EvalConfig | None = None) -> MetricReport:
    """Enhance every pair in `dataset` and score it against its ground truth.

    `dataset` follows the paired-dataset protocol: len(), ids[i], and
    load(i) -> (input01, target01) as HWC float arrays.
    """
    cfg = cfg or EvalConfig()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    report = MetricReport(dataset_name=cfg.dataset_name)
    for i in range(len(dataset)):
        image_id = dataset.ids[i]
        try:
            inp, tgt = dataset.load(i)
            out = enhance_image(model, inp, cfg.level_count)
            report.per_image.append(
                ImageScore(
                    image_id,
                    psnr(out, tgt, cfg.data_range),
                    ssim(out, tgt, cfg.data_range),
                )
            )
        except Exception as exc:
            raise RuntimeError(f"evaluation failed for image '{image_id}': {exc}") from exc
    return report
