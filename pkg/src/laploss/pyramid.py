"""Laplacian pyramid decomposition and its exact inverse.

Pyramids are ordered coarse -> fine: index 0 is the low-frequency Gaussian
residual at (H / 2^(N-1), W / 2^(N-1)); index k >= 1 is a band-pass detail
image at (H / 2^(N-1-k), W / 2^(N-1-k)), where N is the level count.  The
finest band sits at the highest index.

All functions take (B, C, H, W) tensors, preserve dtype, never mutate their
inputs, and are safe to call from multiple threads.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

# Classical 5-tap binomial smoothing kernel.
_TAPS = (1.0, 4.0, 6.0, 4.0, 1.0)

_kernel_cache: dict[tuple, torch.Tensor] = {}


def _kernel(channels: int, gain: float, dtype: torch.dtype, device: torch.device) -> torch.Tensor:
    key = (channels, gain, dtype, device)
    k = _kernel_cache.get(key)
    if k is None:
        t = torch.tensor(_TAPS, dtype=dtype, device=device)
        t = t / t.sum()
        k = (torch.outer(t, t) * gain).expand(channels, 1, 5, 5).contiguous()
        _kernel_cache[key] = k
    return k


def _check_image(image: torch.Tensor, op: str) -> None:
    if image.ndim != 4:
        raise ValueError(f"{op} expects a (B, C, H, W) tensor, got shape {tuple(image.shape)}")


def _blur(image: torch.Tensor, gain: float) -> torch.Tensor:
    b, c, h, w = image.shape
    if h < 3 or w < 3:
        raise ValueError(f"blur needs spatial dims >= 3, got {h}x{w}")
    padded = F.pad(image, (2, 2, 2, 2), mode="reflect")
    return F.conv2d(padded, _kernel(c, gain, image.dtype, image.device), groups=c)


def gaussian_blur(image: torch.Tensor) -> torch.Tensor:
    """Separable binomial (1,4,6,4,1)/16 blur with reflect padding."""
    _check_image(image, "gaussian_blur")
    return _blur(image, 1.0)


def downsample(image: torch.Tensor) -> torch.Tensor:
    """Blur, then keep every second row/column starting at index 0."""
    _check_image(image, "downsample")
    h, w = image.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"downsample needs even spatial dims, got {h}x{w}")
    return _blur(image, 1.0)[..., ::2, ::2]


def upsample(image: torch.Tensor) -> torch.Tensor:
    """Zero-insert to (2H, 2W), then blur with a gain-4 kernel.

    The gain compensates for the inserted zeros so constants are preserved
    and reconstruct() is exact.
    """
    _check_image(image, "upsample")
    b, c, h, w = image.shape
    z = image.new_zeros((b, c, 2 * h, 2 * w))
    z[..., ::2, ::2] = image
    return _blur(z, 4.0)


def validate_decomposable(height: int, width: int, level_count: int) -> None:
    """Raise ValueError unless an HxW image supports `level_count` levels."""
    if level_count < 2:
        raise ValueError(f"level_count must be >= 2, got {level_count}")
    div = 2 ** (level_count - 1)
    if height % div or width % div:
        raise ValueError(
            f"image size {height}x{width} not divisible by 2^{level_count - 1} = {div}"
        )
    # Every Gaussian level that gets blurred must be at least 4x4.
    if height < 2 ** level_count or width < 2 ** level_count:
        raise ValueError(
            f"image size {height}x{width} too small for {level_count} levels "
            f"(need >= {2 ** level_count} per side)"
        )


def decompose(image: torch.Tensor, level_count: int = 3) -> list[torch.Tensor]:
    """Split an image into a Laplacian pyramid, ordered coarse -> fine.

    With G_0 = image and G_{j+1} = downsample(G_j), the bands are
    B_j = G_j - upsample(G_{j+1}); the returned list is
    [G_{N-1}, B_{N-2}, ..., B_0].
    """
    _check_image(image, "decompose")
    h, w = image.shape[-2:]
    validate_decomposable(h, w, level_count)
    gaussians = [image]
    for _ in range(level_count - 1):
        gaussians.append(downsample(gaussians[-1]))
    levels = [gaussians[-1]]
    for j in range(level_count - 2, -1, -1):
        levels.append(gaussians[j] - upsample(gaussians[j + 1]))
    return levels


def reconstruct(pyramid: list[torch.Tensor]) -> torch.Tensor:
    """Fold a coarse -> fine pyramid back into a full-resolution image."""
    if len(pyramid) < 2:
        raise ValueError("pyramid needs at least two levels")
    for lvl in pyramid:
        _check_image(lvl, "reconstruct")
    out = pyramid[0]
    for band in pyramid[1:]:
        if band.shape[-2:] != (2 * out.shape[-2], 2 * out.shape[-1]) or band.shape[:2] != out.shape[:2]:
            raise ValueError(
                f"level shape {tuple(band.shape)} does not follow {tuple(out.shape)} by a factor of 2"
            )
        out = band + upsample(out)
    return out


def level_shapes(height: int, width: int, level_count: int) -> list[tuple[int, int]]:
    """Spatial shape of each pyramid level, coarse -> fine."""
    return [
        (height // 2 ** (level_count - 1 - k), width // 2 ** (level_count - 1 - k))
        for k in range(level_count)
    ]
