"""Run-configuration files: JSON with sections {model, loss, data, train, eval}.

Documents are validated before any work starts: unknown sections or keys are
rejected, defaults are applied, and the fully resolved document is echoed
into the run's output directory so it can reproduce the run verbatim.
"""

from __future__ import annotations

import json
from pathlib import Path

from .data import AugmentationConfig
from .losses import AdversarialVariant, LossWeights
from .models import GeneratorSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


# key -> (type tag, default); tags: int, number, str, bool, str?, lambdas, augment?
SCHEMA = {
    "model": {
        "level_count": ("int", 3),
        "blocks_low": ("int", 3),
        "blocks_mid": ("int", 3),
        "blocks_top": ("int", 3),
        "width": ("int", 64),
    },
    "loss": {
        "lambdas": ("lambdas", [1 / 3, 1 / 3, 1 / 3]),
        "w": ("number", 4.5e3),
        "variant": ("str", "lsgan"),
    },
    "data": {
        "root": ("str?", None),
        "eval_root": ("str?", None),
        "height": ("int", 96),
        "width": ("int", 64),
        "train_split": ("str", "train"),
        "eval_split": ("str", "test_under"),
        "augment": ("augment?", None),
    },
    "train": {
        "batch_size": ("int", 8),
        "steps": ("int", 300),
        "seed": ("int", 0),
        "lr_generator": ("number", 1e-3),
        "lr_discriminator": ("number", 1e-3),
        "optimizer_generator": ("str", "adam"),
        "weight_decay": ("number", 1e-2),
        "checkpoint_interval": ("int", 0),
        "eval_interval": ("int", 0),
        "dtype": ("str", "float32"),
        "disc_base_width": ("int", 64),
        "wgan_clip": ("number", 0.01),
    },
    "eval": {
        "split": ("str", "test_under"),
        "write_csv": ("bool", True),
    },
}

AUGMENT_SCHEMA = {
    "hflip_prob": ("number", 0.5),
    "vflip_prob": ("number", 0.5),
    "shift_limit": ("number", 0.1),
    "scale_limit": ("number", 0.1),
    "rotate_limit": ("number", 15.0),
    "seed": ("int", 0),
}


def _check(value, tag, path):
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{path}' must be an integer, got {value!r}")
    elif tag == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' must be a number, got {value!r}")
    elif tag == "str":
        if not isinstance(value, str):
            raise ConfigError(f"'{path}' must be a string, got {value!r}")
    elif tag == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"'{path}' must be a boolean, got {value!r}")
    elif tag == "str?":
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"'{path}' must be a string or null, got {value!r}")
    elif tag == "lambdas":
        if not isinstance(value, list) or not value or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"'{path}' must be a non-empty list of numbers, got {value!r}")
    return value


def _resolve_section(doc, name, schema, path_prefix=""):
    given = doc.get(name, {})
    if not isinstance(given, dict):
        raise ConfigError(f"section '{name}' must be an object, got {given!r}")
    for key in given:
        if key not in schema:
            raise ConfigError(f"unknown key '{path_prefix}{name}.{key}'")
    out = {}
    for key, (tag, default) in schema.items():
        value = given.get(key, default)
        if tag == "augment?":
            if value is not None:
                if not isinstance(value, dict):
                    raise ConfigError(f"'{name}.{key}' must be an object or null")
                value = _resolve_section({"augment": value}, "augment", AUGMENT_SCHEMA, f"{name}.")
            out[key] = value
        else:
            out[key] = _check(value, tag, f"{path_prefix}{name}.{key}")
    return out


def resolve_config(doc: dict) -> dict:
    """Validate a raw document and fill in every default."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for section in doc:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section '{section}'")
    return {name: _resolve_section(doc, name, schema) for name, schema in SCHEMA.items()}


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file '{path}' is not valid JSON: {exc}") from exc
    return resolve_config(doc)


def build_train_config(resolved: dict) -> TrainConfig:
    """Turn a resolved document into the trainer's configuration object."""
    m, l, d, t = resolved["model"], resolved["loss"], resolved["data"], resolved["train"]
    try:
        spec = GeneratorSpec(
            level_count=m["level_count"],
            blocks_low=m["blocks_low"],
            blocks_mid=m["blocks_mid"],
            blocks_top=m["blocks_top"],
            width=m["width"],
        )
        weights = LossWeights(lambdas=tuple(l["lambdas"]), w=float(l["w"]))
        variant = AdversarialVariant(l["variant"])
        augment = AugmentationConfig(**d["augment"]) if d["augment"] else None
        cfg = TrainConfig(
            generator_spec=spec,
            loss_weights=weights,
            variant=variant,
            lr_generator=float(t["lr_generator"]),
            lr_discriminator=float(t["lr_discriminator"]),
            optimizer_generator=t["optimizer_generator"],
            weight_decay=float(t["weight_decay"]),
            batch_size=t["batch_size"],
            steps=t["steps"],
            seed=t["seed"],
            checkpoint_interval=t["checkpoint_interval"],
            eval_interval=t["eval_interval"],
            dtype=t["dtype"],
            disc_base_width=t["disc_base_width"],
            wgan_clip=float(t["wgan_clip"]),
            augment=augment,
            image_hw=(d["height"], d["width"]),
        )
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
