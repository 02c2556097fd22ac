"""Run configuration: a flat JSON-serializable dict covering training
hyperparameters, synthetic-data generation, and output paths.

Resolution order (later wins): built-in defaults, then the named preset,
then keys from a config file, then explicit command-line overrides.
Unknown keys are rejected by name so typos fail loudly instead of being
silently ignored."""

from __future__ import annotations

import json

from .data import SyntheticSpec
from .errors import ConfigError
from .trainer import TrainConfig

DEFAULTS: dict = {
    "preset": None,
    # loss weights
    "lambda_swap": 0.9,
    "lambda_str": 1.2,
    "lambda_adv": 1.3,
    # optimization
    "learning_rate": 1e-3,
    "gen_lr": None,
    "dom_lr": None,
    "epochs": 15,
    "batch_size": 8,
    "seed": 0,
    # model geometry
    "image_size": 32,
    "in_channels": 1,
    "d_tex": 32,
    "c_str": 1,
    "enc_widths": (64, 32, 32),
    "disc_widths": (32, 32, 64),
    "gcn_hidden": 32,
    "gcn_out": 16,
    "dom_hidden": 16,
    "n_classes": 4,
    # ablations / variants
    "disable_str": False,
    "disable_swap": False,
    "source_only": False,
    "rec_loss": "l1",
    "domain_disc_on_latents": False,
    "eval_batch": None,
    # synthetic data generation
    "n_per_class": 100,
    "noise_level": 0.08,
    "speckle_level": 0.25,
    "bias_amplitude": 0.25,
    # embedding map
    "tsne_perplexity": 10.0,
    "tsne_iters": 500,
    # paths
    "source_dir": None,
    "target_dir": None,
    "out_dir": "runs/out",
}

# Loss-weight presets for the benchmark datasets the weights were reported
# on, plus "desk", the tuned setting for the built-in synthetic benchmark.
PRESETS: dict[str, dict] = {
    "camelyon": {"lambda_swap": 0.9, "lambda_str": 1.2, "lambda_adv": 1.3},
    "chexpert": {"lambda_swap": 0.95, "lambda_str": 1.1, "lambda_adv": 1.3},
    "nih": {"lambda_swap": 0.9, "lambda_str": 1.2, "lambda_adv": 1.2},
    "desk": {
        "lambda_swap": 0.9,
        "lambda_str": 1.2,
        "lambda_adv": 1.3,
        "epochs": 15,
        "batch_size": 8,
        "image_size": 32,
        "d_tex": 32,
        "n_classes": 4,
        "n_per_class": 100,
    },
}

_BOOL_KEYS = {"disable_str", "disable_swap", "source_only", "domain_disc_on_latents"}
_INT_KEYS = {
    "epochs", "batch_size", "seed", "image_size", "in_channels", "d_tex",
    "c_str", "gcn_hidden", "gcn_out", "dom_hidden", "n_classes",
    "n_per_class", "tsne_iters",
}
_FLOAT_KEYS = {
    "lambda_swap", "lambda_str", "lambda_adv", "learning_rate",
    "noise_level", "speckle_level", "bias_amplitude", "tsne_perplexity",
}
_TUPLE_KEYS = {"enc_widths", "disc_widths"}


def _check_value(key: str, value):
    """Coerce and type-check one config value; raises ConfigError."""
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"config key '{key}' must be a boolean, got {value!r}")
        return value
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key '{key}' must be an integer, got {value!r}")
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{key}' must be a number, got {value!r}")
        return float(value)
    if key in _TUPLE_KEYS:
        if not isinstance(value, (list, tuple)) or len(value) != 3 or not all(
            isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in value
        ):
            raise ConfigError(f"config key '{key}' must be a list of three positive integers, got {value!r}")
        return tuple(value)
    if key == "eval_batch":
        if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"config key 'eval_batch' must be an integer or null, got {value!r}")
        return value
    if key in ("gen_lr", "dom_lr"):
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"config key '{key}' must be a number or null, got {value!r}")
        return None if value is None else float(value)
    if key in ("preset", "rec_loss", "source_dir", "target_dir", "out_dir"):
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"config key '{key}' must be a string, got {value!r}")
        return value
    raise ConfigError(f"unknown config key '{key}'")


def _apply(base: dict, patch: dict, origin: str) -> None:
    for key, value in patch.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}' (from {origin})")
        base[key] = _check_value(key, value)


def preset_values(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset '{name}'; valid presets: {', '.join(sorted(PRESETS))}"
        )
    return dict(PRESETS[name])


def load_config_file(path: str) -> dict:
    """Read a JSON config file; every key must be a known config key."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    for key, value in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}' (from {path})")
        _check_value(key, value)
    return raw


def resolve_config(
    config_path: str | None = None,
    preset: str | None = None,
    overrides: dict | None = None,
) -> dict:
    """Merge defaults, preset, config file, and explicit overrides."""
    merged = dict(DEFAULTS)
    file_patch = load_config_file(config_path) if config_path is not None else {}
    preset_name = preset if preset is not None else file_patch.get("preset")
    if preset_name is not None:
        _apply(merged, preset_values(preset_name), f"preset '{preset_name}'")
        merged["preset"] = preset_name
    _apply(merged, {k: v for k, v in file_patch.items() if k != "preset"},
           config_path or "config file")
    if overrides:
        _apply(merged, overrides, "command line")
    return merged


def to_train_config(cfg: dict) -> TrainConfig:
    tc = TrainConfig(
        lambda_swap=cfg["lambda_swap"],
        lambda_str=cfg["lambda_str"],
        lambda_adv=cfg["lambda_adv"],
        learning_rate=cfg["learning_rate"],
        gen_lr=cfg["gen_lr"],
        dom_lr=cfg["dom_lr"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        image_size=cfg["image_size"],
        in_channels=cfg["in_channels"],
        d_tex=cfg["d_tex"],
        c_str=cfg["c_str"],
        enc_widths=tuple(cfg["enc_widths"]),
        disc_widths=tuple(cfg["disc_widths"]),
        gcn_hidden=cfg["gcn_hidden"],
        gcn_out=cfg["gcn_out"],
        dom_hidden=cfg["dom_hidden"],
        n_classes=cfg["n_classes"],
        seed=cfg["seed"],
        disable_str=cfg["disable_str"],
        disable_swap=cfg["disable_swap"],
        source_only=cfg["source_only"],
        rec_loss=cfg["rec_loss"],
        domain_disc_on_latents=cfg["domain_disc_on_latents"],
        eval_batch=cfg["eval_batch"],
    )
    tc.validate()
    return tc


def to_synthetic_spec(cfg: dict) -> SyntheticSpec:
    if cfg["n_per_class"] < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {cfg['n_per_class']}")
    return SyntheticSpec(
        n_per_class=cfg["n_per_class"],
        n_classes=cfg["n_classes"],
        size=cfg["image_size"],
        noise_level=cfg["noise_level"],
        speckle_level=cfg["speckle_level"],
        bias_amplitude=cfg["bias_amplitude"],
        seed=cfg["seed"],
    )
