"""Three-branch pyramid translation generator and per-level discriminators.

The generator runs one branch per pyramid level, coarse to fine.  The coarse
branch fully regenerates the low-frequency residual through a tanh head; every
finer branch receives its band concatenated with the 2x-upsampled features of
the previous branch and predicts a tanh-bounded correction that is added to
the band.  Output level shapes always equal input level shapes.

Models are mutable during training under a single-writer contract; read-only
inference may run concurrently once training stops.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from .pyramid import upsample

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class GeneratorSpec:
    level_count: int = 3
    blocks_low: int = 3
    blocks_mid: int = 3
    blocks_top: int = 3
    width: int = 64

    def validate(self) -> None:
        if self.level_count < 2:
            raise ValueError(f"level_count must be >= 2, got {self.level_count}")
        for name in ("blocks_low", "blocks_mid", "blocks_top"):
            v = getattr(self, name)
            if not 1 <= v <= 8:
                raise ValueError(f"{name} must be in [1, 8], got {v}")
        if self.width < 4:
            raise ValueError(f"width must be >= 4, got {self.width}")

    def blocks_for_level(self, level: int) -> int:
        if level == 0:
            return self.blocks_low
        if level == self.level_count - 1:
            return self.blocks_top
        return self.blocks_mid

    @property
    def stem_width(self) -> int:
        # Narrow entry conv keeps the parameter budget close to the
        # per-block cost of 2*(9*width^2 + width).
        return max(self.width // 4, 4)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        spec = cls(**d)
        spec.validate()
        return spec


class InstanceNorm(nn.Module):
    """Per-instance, per-channel normalization over spatial dims, no affine.

    Implemented directly (rather than nn.InstanceNorm2d) so it accepts any
    spatial size, including 1x1 maps inside deep discriminators.
    """

    def __init__(self, eps: float = 1e-5):
        super().__init__()
        self.eps = eps

    def forward(self, x):
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
        return (x - mean) / torch.sqrt(var + self.eps)


class ResidualBlock(nn.Module):
    """conv3x3 -> leaky ReLU -> conv3x3, identity skip."""

    def __init__(self, width: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(width, width, 3, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(width, width, 3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


class _Branch(nn.Module):
    def __init__(self, spec: GeneratorSpec, level: int):
        super().__init__()
        w = spec.width
        self.level = level
        if level == 0:
            # no bias on the conv feeding the norm: a constant channel shift
            # is cancelled exactly, leaving a gradient-free parameter
            self.stem = nn.Sequential(
                nn.Conv2d(3, spec.stem_width, 3, padding=1, bias=False),
                InstanceNorm(),
                nn.LeakyReLU(LEAKY_SLOPE),
                nn.Conv2d(spec.stem_width, w, 3, padding=1),
                nn.LeakyReLU(LEAKY_SLOPE),
            )
        else:
            self.stem = nn.Sequential(
                nn.Conv2d(3 + w, w, 3, padding=1),
                nn.LeakyReLU(LEAKY_SLOPE),
            )
        self.blocks = nn.Sequential(*[ResidualBlock(w) for _ in range(spec.blocks_for_level(level))])
        self.head = nn.Conv2d(w, 3, 3, padding=1)

    def forward(self, x):
        feats = self.blocks(self.stem(x))
        return feats, torch.tanh(self.head(feats))


class Generator(nn.Module):
    """Pyramid-in, pyramid-out translation network."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.branches = nn.ModuleList(
            [_Branch(spec, level) for level in range(spec.level_count)]
        )

    def forward(self, input_pyramid: list) -> list:
        if len(input_pyramid) != self.spec.level_count:
            raise ValueError(
                f"pyramid has {len(input_pyramid)} levels, spec wants {self.spec.level_count}"
            )
        out = []
        feats = None
        for level, (branch, band) in enumerate(zip(self.branches, input_pyramid)):
            if level == 0:
                feats, translated = branch(band)
            else:
                if band.shape[-2:] != (2 * feats.shape[-2], 2 * feats.shape[-1]):
                    raise ValueError(
                        f"level {level} shape {tuple(band.shape[-2:])} does not double "
                        f"the previous level"
                    )
                feats, residual = branch(torch.cat([band, upsample(feats)], dim=1))
                translated = residual + band
            out.append(translated)
        return out


class DiscriminatorBlock(nn.Module):
    """Stride-2 residual block: conv/IN/leaky paths with a 1x1 strided skip."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1, bias=False),
            InstanceNorm(),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
            InstanceNorm(),
        )
        self.skip = nn.Conv2d(in_ch, out_ch, 1, stride=2)
        self.act = nn.LeakyReLU(LEAKY_SLOPE)

    def forward(self, x):
        return self.act(self.body(x) + self.skip(x))


class LevelDiscriminator(nn.Module):
    """Patch scorer: stacked stride-2 residual blocks, 1-channel conv head.

    Raw scores, no sigmoid; the score map is input_size / 2^block_count.
    """

    def __init__(self, block_count: int, base_width: int = 64):
        super().__init__()
        widths = [min(base_width * 2 ** i, base_width * 8) for i in range(block_count)]
        blocks = []
        in_ch = 3
        for w in widths:
            blocks.append(DiscriminatorBlock(in_ch, w))
            in_ch = w
        self.blocks = nn.Sequential(*blocks)
        self.score = nn.Conv2d(in_ch, 1, 3, padding=1)

    def forward(self, x):
        return self.score(self.blocks(x))


def blocks_per_level(level_count: int) -> list[int]:
    """Coarse levels get 4 downsampling blocks, the finest gets 3."""
    return [4] * (level_count - 1) + [3]


class LevelDiscriminators(nn.Module):
    """One patch discriminator per pyramid level.

    `image_hw`, when given, is the full-resolution training size used to
    validate that each level sees exactly its own resolution.
    """

    def __init__(self, level_count: int = 3, base_width: int = 64, image_hw=None):
        super().__init__()
        if level_count < 2:
            raise ValueError(f"level_count must be >= 2, got {level_count}")
        self.level_count = level_count
        self.image_hw = tuple(image_hw) if image_hw is not None else None
        self.discriminators = nn.ModuleList(
            [LevelDiscriminator(n, base_width) for n in blocks_per_level(level_count)]
        )

    def expected_hw(self, level: int):
        if self.image_hw is None:
            return None
        h, w = self.image_hw
        s = 2 ** (self.level_count - 1 - level)
        return (h // s, w // s)

    def forward(self, level: int, image: torch.Tensor) -> torch.Tensor:
        if not 0 <= level < self.level_count:
            raise ValueError(f"level {level} out of range [0, {self.level_count})")
        expected = self.expected_hw(level)
        if expected is not None and tuple(image.shape[-2:]) != expected:
            raise ValueError(
                f"level {level} expects resolution {expected}, got {tuple(image.shape[-2:])}"
            )
        return self.discriminators[level](image)


def discriminator_forward(d: LevelDiscriminators, level: int, image: torch.Tensor) -> torch.Tensor:
    return d(level, image)


def count_parameters(model: nn.Module) -> int:
    """Number of trainable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def _init_conv_weights(model: nn.Module, seed: int) -> None:
    # Fan-in-scaled normal init, deterministic in module definition order.
    gen = torch.Generator().manual_seed(seed)
    gain = (2.0 / (1.0 + LEAKY_SLOPE ** 2)) ** 0.5
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            with torch.no_grad():
                m.weight.normal_(0.0, gain / fan_in ** 0.5, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()


def build_generator(spec: GeneratorSpec, seed: int, dtype: torch.dtype = torch.float32) -> Generator:
    """Construct a generator with deterministic weights for a given seed."""
    spec.validate()
    g = Generator(spec)
    _init_conv_weights(g, seed)
    return g.to(dtype)


def build_discriminators(
    level_count: int = 3,
    seed: int = 0,
    base_width: int = 64,
    image_hw=None,
    dtype: torch.dtype = torch.float32,
) -> LevelDiscriminators:
    d = LevelDiscriminators(level_count, base_width, image_hw)
    _init_conv_weights(d, seed)
    return d.to(dtype)


class CheckpointMismatch(ValueError):
    """Checkpoint sidecar disagrees with the requested configuration."""


def save_checkpoint(directory, generator: Generator, seed: int, step: int) -> Path:
    """Write generator weights plus a JSON sidecar describing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(generator.state_dict(), directory / "generator.pt")
    sidecar = {"generator_spec": generator.spec.to_dict(), "seed": seed, "step": step}
    (directory / "spec.json").write_text(json.dumps(sidecar, indent=2))
    return directory


def load_checkpoint(
    directory,
    expected_spec: GeneratorSpec | None = None,
    dtype: torch.dtype = torch.float32,
):
    """Load (generator, sidecar) from a checkpoint directory.

    Raises CheckpointMismatch if `expected_spec` disagrees with the sidecar.
    """
    directory = Path(directory)
    sidecar_path = directory / "spec.json"
    weights_path = directory / "generator.pt"
    if not sidecar_path.is_file() or not weights_path.is_file():
        raise FileNotFoundError(f"not a checkpoint directory: {directory}")
    sidecar = json.loads(sidecar_path.read_text())
    spec = GeneratorSpec.from_dict(sidecar["generator_spec"])
    if expected_spec is not None and expected_spec != spec:
        raise CheckpointMismatch(
            f"checkpoint spec {spec.to_dict()} != configured spec {expected_spec.to_dict()}"
        )
    g = Generator(spec).to(dtype)
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    g.load_state_dict(state)
    return g, sidecar
