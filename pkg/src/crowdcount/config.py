"""Architecture and training hyperparameters, with config-file parsing."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

# VGG16 front end: conv widths, with a 2x2 max-pool after the conv indices in
# VGG_POOL_AFTER (zero-based).  Three pools -> stride-8, 512-channel output.
VGG_FRONT_CHANNELS = (64, 64, 128, 128, 256, 256, 256, 512, 512, 512)
VGG_POOL_AFTER = (1, 3, 6)

SIGMA_MODES = ("knn", "fixed")


@dataclass
class ModelConfig:
    """Every knob of the network and its training pipeline.

    ``channel_multiplier`` scales all layer widths proportionally (minimum 1
    channel); values well below 1 give desk-scale models for gradient checks
    and smoke training.  ``class_threshold`` / ``region_threshold`` default to
    dataset-relative values computed at training time (median training count,
    4x the mean positive cell value per map).
    """

    backbone_channels: tuple[int, ...] = VGG_FRONT_CHANNELS
    pyramid_scales: tuple[int, ...] = (2, 4, 8)
    pyramid_reduced_channels: int = 32
    dilation_rate: int = 2
    decoder_channels: tuple[int, ...] = (512, 256, 128, 128, 1)
    knn_k: int = 3
    beta: float = 0.3
    sigma_fixed: float = 15.0
    sigma_mode: str = "knn"
    class_threshold: float | None = None
    region_threshold: float | None = None
    loss_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    channel_multiplier: float = 1.0
    seed: int = 0
    post_attention: bool = True
    use_crop_augment: bool = False
    use_resize_augment: bool = False
    lr: float = 1e-4

    def __post_init__(self) -> None:
        self.backbone_channels = tuple(int(c) for c in self.backbone_channels)
        self.pyramid_scales = tuple(int(s) for s in self.pyramid_scales)
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if len(self.backbone_channels) < 7 or any(c < 1 for c in self.backbone_channels):
            raise ValueError("backbone_channels must list at least 7 positive widths")
        if not self.pyramid_scales:
            raise ValueError("pyramid_scales must be non-empty")
        if any(s < 2 for s in self.pyramid_scales):
            raise ValueError("every pyramid scale must be >= 2")
        if any(a >= b for a, b in zip(self.pyramid_scales, self.pyramid_scales[1:])):
            raise ValueError("pyramid_scales must be strictly increasing")
        if len(self.decoder_channels) != 5 or self.decoder_channels[-1] != 1:
            raise ValueError("decoder_channels must be 5 widths ending in 1")
        if self.dilation_rate < 1:
            raise ValueError("dilation_rate must be >= 1")
        if self.pyramid_reduced_channels < 1:
            raise ValueError("pyramid_reduced_channels must be >= 1")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.sigma_fixed <= 0:
            raise ValueError("sigma_fixed must be positive")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
        if len(self.loss_weights) != 4:
            raise ValueError("loss_weights must have 4 entries")
        if not (0.0 < self.channel_multiplier <= 1.0):
            raise ValueError("channel_multiplier must be in (0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def scaled(self, channels: int) -> int:
        """Layer width after applying the channel multiplier (at least 1)."""
        return max(1, int(round(channels * self.channel_multiplier)))


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace(",", " ").split())


def _parse_optional_float(text: str) -> float | None:
    if text.strip().lower() in ("none", ""):
        return None
    return float(text)


# flat config-file key -> (ModelConfig field, parser)
CONFIG_KEYS = {
    "backbone_channels": ("backbone_channels", _parse_int_list),
    "pyramid_scales": ("pyramid_scales", _parse_int_list),
    "pyramid_reduced_channels": ("pyramid_reduced_channels", int),
    "dilation_rate": ("dilation_rate", int),
    "decoder_channels": ("decoder_channels", _parse_int_list),
    "knn_k": ("knn_k", int),
    "beta": ("beta", float),
    "sigma_fixed": ("sigma_fixed", float),
    "sigma_mode": ("sigma_mode", str),
    "class_threshold": ("class_threshold", _parse_optional_float),
    "region_threshold": ("region_threshold", _parse_optional_float),
    "channel_multiplier": ("channel_multiplier", float),
    "seed": ("seed", int),
    "lr": ("lr", float),
    "backbone.post_attention": ("post_attention", _parse_bool),
    "augment.crops": ("use_crop_augment", _parse_bool),
    "augment.resize": ("use_resize_augment", _parse_bool),
}
LOSS_WEIGHT_KEYS = {
    "loss.lambda_s": 0,
    "loss.lambda_d": 1,
    "loss.lambda_f": 2,
    "loss.lambda_cls": 3,
}


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    settings: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        settings[key] = value
    return settings


def apply_settings(config: ModelConfig, settings: dict[str, str]) -> ModelConfig:
    """Return a copy of ``config`` with the given flat settings applied."""
    updates: dict[str, object] = {}
    weights = list(config.loss_weights)
    for key, value in settings.items():
        if key in LOSS_WEIGHT_KEYS:
            weights[LOSS_WEIGHT_KEYS[key]] = float(value)
        elif key in CONFIG_KEYS:
            field, parser = CONFIG_KEYS[key]
            updates[field] = parser(value)
        else:
            raise ValueError(f"unknown config key: {key!r}")
    updates["loss_weights"] = tuple(weights)
    return dataclasses.replace(config, **updates)


def load_config(path: str | Path, base: ModelConfig | None = None) -> ModelConfig:
    return apply_settings(base or ModelConfig(), read_config_file(path))
