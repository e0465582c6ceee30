"""Dataset scanning, loading, paired augmentation, and synthetic exposure data.

Expected layout: `root/<scene_id>/<variant>.{png,jpg}` holds the exposure
variants of one scene, and `root/gt/<scene_id>.{png,jpg}` the ground truth.
EV labels are parsed from variant filename stems (e.g. "-1.0.png"); stems
that do not parse as a number can be mapped through an `ev_labels.json`
file in the dataset root, or are kept as plain string tags ("grad", "mix").
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SPLITS = ("train", "test_under", "test_over", "grad", "mix")


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExposureVariant:
    label: str
    ev: float | None
    path: Path


@dataclass
class SampleManifest:
    scene_id: str
    exposure_variants: list[ExposureVariant]
    ground_truth: Path


@dataclass(frozen=True)
class SplitSpec:
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")

    def select(self, manifest: SampleManifest) -> list[ExposureVariant]:
        if self.split == "train":
            return list(manifest.exposure_variants)
        if self.split in ("test_under", "test_over"):
            target = -1.0 if self.split == "test_under" else 1.0
            hits = [
                v
                for v in manifest.exposure_variants
                if v.ev is not None and abs(v.ev - target) < 1e-6
            ]
            if not hits:
                raise DatasetError(
                    f"scene '{manifest.scene_id}' has no {target:+.0f} EV variant "
                    f"required by split '{self.split}'"
                )
            return hits
        hits = [v for v in manifest.exposure_variants if v.label == self.split]
        if not hits:
            raise DatasetError(
                f"scene '{manifest.scene_id}' has no '{self.split}' variant"
            )
        return hits


@dataclass(frozen=True)
class AugmentationConfig:
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    shift_limit: float = 0.1
    scale_limit: float = 0.1
    rotate_limit: float = 15.0
    seed: int = 0

    def __post_init__(self):
        for name in ("hflip_prob", "vflip_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def _parse_ev(stem: str, mapping: dict) -> float | None:
    if stem in mapping:
        return float(mapping[stem])
    try:
        return float(stem)
    except ValueError:
        return None


def _verify_readable(path: Path) -> None:
    try:
        with Image.open(path) as im:
            im.verify()
    except (UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"unreadable image '{path}': {exc}") from exc


def write_manifest_cache(manifests: list[SampleManifest], path) -> None:
    doc = [
        {
            "scene_id": m.scene_id,
            "ground_truth": str(m.ground_truth),
            "variants": [
                {"label": v.label, "ev": v.ev, "path": str(v.path)}
                for v in m.exposure_variants
            ],
        }
        for m in manifests
    ]
    Path(path).write_text(json.dumps(doc, indent=2))


def read_manifest_cache(path) -> list[SampleManifest]:
    doc = json.loads(Path(path).read_text())
    return [
        SampleManifest(
            m["scene_id"],
            [ExposureVariant(v["label"], v["ev"], Path(v["path"])) for v in m["variants"]],
            Path(m["ground_truth"]),
        )
        for m in doc
    ]


def scan_dataset(
    root, split=None, ev_labels: dict | None = None, cache_path=None
) -> list[SampleManifest]:
    """Build deterministic, lexicographically ordered manifests for `root`.

    `split` (a SplitSpec, split name, or None) is validated against every
    scene so missing variants fail loudly at scan time.  `cache_path`, when
    given, receives the manifests as JSON.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root '{root}' is not a directory")
    if ev_labels is None:
        labels_path = root / "ev_labels.json"
        ev_labels = json.loads(labels_path.read_text()) if labels_path.is_file() else {}
    gt_dir = root / "gt"
    manifests = []
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir() and p.name != "gt"):
        gts = [gt_dir / (scene_dir.name + s) for s in IMAGE_SUFFIXES]
        gt = next((p for p in gts if p.is_file()), None)
        if gt is None:
            raise DatasetError(f"missing ground truth for scene '{scene_dir.name}' in '{gt_dir}'")
        _verify_readable(gt)
        variants = []
        seen_evs = set()
        for f in sorted(scene_dir.iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            _verify_readable(f)
            ev = _parse_ev(f.stem, ev_labels)
            if ev is not None:
                if ev in seen_evs:
                    raise DatasetError(f"duplicate EV {ev} in scene '{scene_dir.name}'")
                seen_evs.add(ev)
            variants.append(ExposureVariant(f.stem, ev, f))
        if not variants:
            raise DatasetError(f"scene '{scene_dir.name}' has no image variants")
        manifests.append(SampleManifest(scene_dir.name, variants, gt))
    if split is not None:
        spec = split if isinstance(split, SplitSpec) else SplitSpec(split)
        for m in manifests:
            spec.select(m)
    if cache_path is not None:
        write_manifest_cache(manifests, cache_path)
    return manifests


def _resize_chw(img: np.ndarray, height: int, width: int) -> np.ndarray:
    t = torch.from_numpy(img.transpose(2, 0, 1))[None]
    out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False)
    return out[0].numpy().transpose(1, 2, 0)


def load_and_resize(path, height: int, width: int) -> np.ndarray:
    """Decode an image, bilinear-resize to (height, width), scale to [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"cannot decode image '{path}': {exc}") from exc
    if arr.shape[:2] != (height, width):
        arr = _resize_chw(arr, height, width)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def _paired_affine(images, shift, scale, angle_deg, order=1):
    h, w = images[0].shape[:2]
    theta = math.radians(angle_deg)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    t = np.array([shift[0] * h, shift[1] * w])
    rot = np.array(
        [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
    )
    # output -> input mapping for ndimage: inverse of (scale * rotation) + shift
    inv = np.linalg.inv(rot * scale)
    offset = center - inv @ (center + t)
    out = []
    for img in images:
        channels = [
            ndimage.affine_transform(
                img[:, :, ch], inv, offset=offset, order=order, mode="reflect"
            )
            for ch in range(img.shape[2])
        ]
        out.append(np.stack(channels, axis=2))
    return out


def augment(
    inp: np.ndarray,
    target: np.ndarray,
    cfg: AugmentationConfig,
    rng: np.random.Generator | None = None,
):
    """Apply one shared geometric transform to a paired (input, target)."""
    if inp.shape != target.shape:
        raise ValueError(f"shape mismatch: {inp.shape} vs {target.shape}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    # fixed draw order keeps streams stable regardless of which ops fire
    u_h, u_v = rng.uniform(), rng.uniform()
    shift = rng.uniform(-cfg.shift_limit, cfg.shift_limit, size=2)
    scale = 1.0 + rng.uniform(-cfg.scale_limit, cfg.scale_limit)
    angle = rng.uniform(-cfg.rotate_limit, cfg.rotate_limit)
    out_i, out_t = inp, target
    if u_h < cfg.hflip_prob:
        out_i, out_t = np.flip(out_i, axis=1), np.flip(out_t, axis=1)
    if u_v < cfg.vflip_prob:
        out_i, out_t = np.flip(out_i, axis=0), np.flip(out_t, axis=0)
    if cfg.shift_limit or cfg.scale_limit or cfg.rotate_limit:
        out_i, out_t = _paired_affine([out_i, out_t], shift, scale, angle)
        out_i = np.clip(out_i, 0.0, 1.0)
        out_t = np.clip(out_t, 0.0, 1.0)
    return (
        np.ascontiguousarray(out_i, dtype=np.float32),
        np.ascontiguousarray(out_t, dtype=np.float32),
    )


def synth_exposure_pair(
    base: np.ndarray,
    ev: float,
    rng: np.random.Generator | None = None,
    gamma: float | None = None,
):
    """Degrade `base` by 2^ev with gamma jitter; ground truth is `base`."""
    if not -3.0 <= ev <= 3.0:
        raise ValueError(f"ev must be in [-3, 3], got {ev}")
    if gamma is None:
        if rng is None:
            raise ValueError("need rng when gamma is not fixed")
        gamma = float(rng.uniform(0.8, 1.25))
    degraded = np.clip(base * 2.0 ** ev, 0.0, 1.0) ** gamma
    return degraded.astype(np.float32), base.astype(np.float32)


def synth_grad_image(
    base: np.ndarray,
    rng: np.random.Generator,
    ev_lo: float = -2.5,
    ev_hi: float = 0.0,
) -> np.ndarray:
    """Per-column EV ramp, increasing or decreasing at random.

    The default range only darkens, so no column saturates and the
    column-mean ratio against the ground truth is exactly the gain ramp.
    """
    w = base.shape[1]
    evs = np.linspace(ev_lo, ev_hi, w)
    if rng.uniform() < 0.5:
        evs = evs[::-1]
    return np.clip(base * 2.0 ** evs[None, :, None], 0.0, 1.0).astype(np.float32)


def synth_mix_image(base: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random per-region EV map, smoothed to avoid hard seams."""
    h, w = base.shape[:2]
    cells = rng.uniform(-2.0, 2.0, size=(int(rng.integers(2, 5)), int(rng.integers(2, 5))))
    ev_map = np.kron(cells, np.ones((math.ceil(h / cells.shape[0]), math.ceil(w / cells.shape[1]))))
    ev_map = ndimage.gaussian_filter(ev_map[:h, :w], sigma=min(h, w) / 16.0)
    return np.clip(base * 2.0 ** ev_map[:, :, None], 0.0, 1.0).astype(np.float32)


def make_base_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Procedural ground-truth image: smooth field plus soft random shapes."""
    coarse = rng.uniform(0.1, 0.9, size=(max(height // 16, 2), max(width // 16, 2), 3))
    img = _resize_chw(coarse.astype(np.float32), height, width).astype(np.float64)
    for _ in range(int(rng.integers(2, 5))):
        r0 = int(rng.integers(0, max(height // 2, 1)))
        c0 = int(rng.integers(0, max(width // 2, 1)))
        r1 = min(height, r0 + int(rng.integers(height // 8 + 1, height // 2 + 2)))
        c1 = min(width, c0 + int(rng.integers(width // 8 + 1, width // 2 + 2)))
        color = rng.uniform(0.05, 0.95, size=3)
        alpha = float(rng.uniform(0.4, 0.9))
        img[r0:r1, c0:c1] = (1 - alpha) * img[r0:r1, c0:c1] + alpha * color
    img = ndimage.gaussian_filter(img, sigma=(1.0, 1.0, 0.0))
    return np.clip(img, 0.02, 0.98).astype(np.float32)


def save_image(path, img01: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.clip(img01, 0.0, 1.0) * 255.0).round().astype(np.uint8)).save(path)


def generate_synthetic_dataset(
    out_dir,
    count: int,
    mode: str = "ladder",
    seed: int = 0,
    height: int = 96,
    width: int = 64,
    evs=(-2.0, -1.0, 1.0, 2.0),
) -> list[str]:
    """Write a paired synthetic dataset in the scanner's layout."""
    if mode not in ("ladder", "grad", "mix", "all"):
        raise ValueError(f"mode must be ladder|grad|mix|all, got {mode!r}")
    out_dir = Path(out_dir)
    scene_ids = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        base = make_base_image(rng, height, width)
        scene = f"scene_{i:04d}"
        save_image(out_dir / "gt" / f"{scene}.png", base)
        if mode in ("ladder", "all"):
            for ev in evs:
                degraded, _ = synth_exposure_pair(base, ev, rng=rng)
                save_image(out_dir / scene / f"{ev:+.1f}.png", degraded)
        if mode in ("grad", "all"):
            save_image(out_dir / scene / "grad.png", synth_grad_image(base, rng))
        if mode in ("mix", "all"):
            save_image(out_dir / scene / "mix.png", synth_mix_image(base, rng))
        scene_ids.append(scene)
    return scene_ids


class FilePairs:
    """Paired dataset backed by image files, resized on load and cached."""

    def __init__(self, items, height: int, width: int, cache: bool = True):
        # items: list of (pair_id, input_path, gt_path)
        self.items = list(items)
        self.height = height
        self.width = width
        self._cache: dict | None = {} if cache else None

    def __len__(self):
        return len(self.items)

    @property
    def ids(self):
        return [pid for pid, _, _ in self.items]

    def load(self, i: int):
        pid, inp, gt = self.items[i]
        if self._cache is not None and pid in self._cache:
            return self._cache[pid]
        pair = (
            load_and_resize(inp, self.height, self.width),
            load_and_resize(gt, self.height, self.width),
        )
        if self._cache is not None:
            self._cache[pid] = pair
        return pair


class ArrayPairs:
    """In-memory paired dataset."""

    def __init__(self, inputs, targets, ids=None):
        if len(inputs) != len(targets):
            raise ValueError("inputs and targets must have equal length")
        self.inputs = list(inputs)
        self.targets = list(targets)
        self.ids = list(ids) if ids is not None else [str(i) for i in range(len(inputs))]

    def __len__(self):
        return len(self.inputs)

    def load(self, i: int):
        return self.inputs[i], self.targets[i]


def select_pairs(manifests, split, height: int, width: int, cache: bool = True) -> FilePairs:
    """Flatten manifests into (variant, ground-truth) pairs for a split."""
    spec = split if isinstance(split, SplitSpec) else SplitSpec(split)
    items = []
    for m in manifests:
        for v in spec.select(m):
            items.append((f"{m.scene_id}/{v.label}", v.path, m.ground_truth))
    return FilePairs(items, height, width, cache=cache)


def num_workers() -> int:
    try:
        return max(0, int(os.environ.get("LAPLOSS_NUM_WORKERS", "0")))
    except ValueError:
        return 0


def load_batch(dataset, indices):
    """Load and stack pairs; worker pool preserves single-threaded order."""
    workers = num_workers()
    if workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(dataset.load, indices))
    else:
        pairs = [dataset.load(i) for i in indices]
    inputs = np.stack([p[0] for p in pairs])
    targets = np.stack([p[1] for p in pairs])
    return inputs, targets


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic shuffle; the epoch is folded into the stream seed."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_iterator(dataset, batch_size: int, seed: int, epoch: int = 0):
    """Yield (input, target) batches for one epoch, final partial included."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    perm = epoch_permutation(n, seed, epoch)
    for start in range(0, n, batch_size):
        yield load_batch(dataset, perm[start : start + batch_size])
