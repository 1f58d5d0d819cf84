"""Declarative configuration for models, training and the STFT front end.

Every dataclass round-trips through plain dicts (JSON-compatible); loaders
reject unknown keys and report the offending key path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

import numpy as np

VARIANTS = ("tcn_lps", "tfcn", "tfcn_d")
CAUSALITY_KINDS = ("non_causal", "causal", "semi_causal")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""


def _check_keys(data: dict, allowed, path: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        where = path or "top level"
        raise ConfigError(f"unknown key(s) {unknown} at {where}")


def _pair(value, path: str) -> tuple[int, int]:
    try:
        a, b = value
        return int(a), int(b)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: expected a pair of integers, got {value!r}") from exc


@dataclass(frozen=True)
class CausalityMode:
    """How much future context the model may consume.

    causal: output frame t sees input frames <= t only.
    semi_causal: frames <= t + look_ahead_frames.
    non_causal: symmetric context, no restriction.
    """

    kind: str = "non_causal"
    look_ahead_frames: int = 0

    def __post_init__(self):
        if self.kind not in CAUSALITY_KINDS:
            raise ConfigError(f"causality.kind must be one of {CAUSALITY_KINDS}, got {self.kind!r}")
        if self.look_ahead_frames < 0:
            raise ConfigError("causality.look_ahead_frames must be non-negative")
        if self.kind != "semi_causal" and self.look_ahead_frames != 0:
            raise ConfigError(f"look_ahead_frames only applies to semi_causal, not {self.kind}")

    @classmethod
    def non_causal(cls) -> "CausalityMode":
        return cls("non_causal")

    @classmethod
    def causal(cls) -> "CausalityMode":
        return cls("causal")

    @classmethod
    def semi_causal(cls, look_ahead_frames: int) -> "CausalityMode":
        return cls("semi_causal", look_ahead_frames)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "look_ahead_frames": self.look_ahead_frames}

    @classmethod
    def from_dict(cls, data: dict, path: str = "causality") -> "CausalityMode":
        _check_keys(data, ("kind", "look_ahead_frames"), path)
        return cls(data.get("kind", "non_causal"), int(data.get("look_ahead_frames", 0)))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description.

    The enhancement module stacks ``repeated_blocks`` groups of
    ``dilated_blocks_per_repeat`` dilated blocks; block n inside a group uses
    dilation ``dilation_base ** n`` on both axes (time only for tcn_lps).
    """

    variant: str = "tfcn"
    repeated_blocks: int = 4
    dilated_blocks_per_repeat: int = 8
    block_channels: int = 16
    bottleneck_channels: int = 64
    input_kernel: tuple[int, int] = (5, 7)
    dilated_kernel: tuple[int, int] = (3, 3)
    dilation_base: int = 2
    freq_bins: int = 256
    causality: CausalityMode = field(default_factory=CausalityMode)
    dense_intra: bool = False
    dense_inter: bool = False
    depthwise_dilated: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("repeated_blocks", "dilated_blocks_per_repeat", "block_channels",
                     "bottleneck_channels", "dilation_base", "freq_bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if min(self.input_kernel) < 1 or min(self.dilated_kernel) < 1:
            raise ConfigError("kernel sizes must be >= 1")
        if self.variant == "tfcn" and (self.dense_intra or self.dense_inter
                                       or not self.depthwise_dilated):
            raise ConfigError("tfcn preset requires dense_intra=dense_inter=False "
                              "and depthwise_dilated=True")
        if self.variant == "tfcn_d" and not (self.dense_intra and self.dense_inter
                                             and not self.depthwise_dilated):
            raise ConfigError("tfcn_d preset requires dense_intra=dense_inter=True "
                              "and depthwise_dilated=False")
        if self.variant == "tcn_lps":
            if self.input_kernel[0] != 1 or self.dilated_kernel[0] != 1:
                raise ConfigError("tcn_lps operates on a single-bin freq axis; "
                                  "freq kernel extents must be 1")
            if self.dense_intra or self.dense_inter:
                raise ConfigError("tcn_lps has no dense connections")

    def dilation_for(self, n: int) -> int:
        return self.dilation_base ** n

    def rb_input_channels(self, r: int) -> int:
        """Channels entering repeated block r (concat of earlier outputs when dense)."""
        return self.block_channels * (1 + (r if self.dense_inter else 0))

    def conv0_in_channels(self, r: int, n: int) -> int:
        """Channels entering dilated block n of repeated block r."""
        if self.dense_intra:
            return self.rb_input_channels(r) + self.block_channels * n
        return self.rb_input_channels(r) if n == 0 else self.block_channels

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "repeated_blocks": self.repeated_blocks,
            "dilated_blocks_per_repeat": self.dilated_blocks_per_repeat,
            "block_channels": self.block_channels,
            "bottleneck_channels": self.bottleneck_channels,
            "input_kernel": list(self.input_kernel),
            "dilated_kernel": list(self.dilated_kernel),
            "dilation_base": self.dilation_base,
            "freq_bins": self.freq_bins,
            "causality": self.causality.to_dict(),
            "dense_intra": self.dense_intra,
            "dense_inter": self.dense_inter,
            "depthwise_dilated": self.depthwise_dilated,
        }

    @classmethod
    def from_dict(cls, data: dict, path: str = "model") -> "ModelConfig":
        allowed = [f.name for f in fields(cls)]
        _check_keys(data, allowed, path)
        kwargs = dict(data)
        if "input_kernel" in kwargs:
            kwargs["input_kernel"] = _pair(kwargs["input_kernel"], f"{path}.input_kernel")
        if "dilated_kernel" in kwargs:
            kwargs["dilated_kernel"] = _pair(kwargs["dilated_kernel"], f"{path}.dilated_kernel")
        if "causality" in kwargs:
            kwargs["causality"] = CausalityMode.from_dict(kwargs["causality"],
                                                          f"{path}.causality")
        return cls(**kwargs)

    def with_causality(self, causality: CausalityMode) -> "ModelConfig":
        return replace(self, causality=causality)


def tfcn_config(causality: CausalityMode | None = None, **overrides) -> ModelConfig:
    """Depth-wise dilated preset, ~93k parameters at the default shape."""
    return ModelConfig(variant="tfcn", dense_intra=False, dense_inter=False,
                       depthwise_dilated=True,
                       causality=causality or CausalityMode.non_causal(), **overrides)


def tfcn_d_config(causality: CausalityMode | None = None, **overrides) -> ModelConfig:
    """Densely connected preset with full dilated convolutions (~1.4M params)."""
    return ModelConfig(variant="tfcn_d", dense_intra=True, dense_inter=True,
                       depthwise_dilated=False,
                       causality=causality or CausalityMode.non_causal(), **overrides)


def tcn_lps_config(causality: CausalityMode | None = None, **overrides) -> ModelConfig:
    """1-D structure: frequency bins become channels, convs run along time only."""
    defaults = dict(variant="tcn_lps", block_channels=256, bottleneck_channels=512,
                    input_kernel=(1, 1), dilated_kernel=(1, 3),
                    dense_intra=False, dense_inter=False, depthwise_dilated=True,
                    causality=causality or CausalityMode.non_causal())
    defaults.update(overrides)
    return ModelConfig(**defaults)


@lru_cache(maxsize=8)
def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window; adjacent half-overlapped copies sum to 1."""
    n = np.arange(length)
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)).astype(np.float64)


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 512
    hop: int = 256

    def __post_init__(self):
        if self.hop * 2 != self.frame_len:
            raise ConfigError("hop must be frame_len / 2 (50% overlap keeps the "
                              "window overlap-add constant)")

    @property
    def bins(self) -> int:
        return self.frame_len // 2 + 1

    @property
    def window(self) -> np.ndarray:
        return hann_window(self.frame_len)

    def to_dict(self) -> dict:
        return {"frame_len": self.frame_len, "hop": self.hop}

    @classmethod
    def from_dict(cls, data: dict, path: str = "stft") -> "StftConfig":
        _check_keys(data, ("frame_len", "hop"), path)
        return cls(int(data.get("frame_len", 512)), int(data.get("hop", 256)))


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 1e-3
    lr_halving_patience: int = 3
    early_stop_patience: int = 10
    max_epochs: int = 100
    segment_samples: int = 32000
    batch_size: int = 8
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr_halving_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs and batch_size must be >= 1")
        if self.segment_samples % 256 != 0:
            raise ConfigError("segment_samples must be a multiple of the 256-sample hop")
        if self.initial_lr <= 0:
            raise ConfigError("initial_lr must be positive")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, data: dict, path: str = "train") -> "TrainConfig":
        allowed = [f.name for f in fields(cls)]
        _check_keys(data, allowed, path)
        kwargs = dict(data)
        if "adam_betas" in kwargs:
            b0, b1 = kwargs["adam_betas"]
            kwargs["adam_betas"] = (float(b0), float(b1))
        return cls(**kwargs)


@dataclass(frozen=True)
class RunPaths:
    train_manifest: str
    stats: str
    out_dir: str
    val_manifest: str | None = None

    def to_dict(self) -> dict:
        return {"train_manifest": self.train_manifest, "stats": self.stats,
                "out_dir": self.out_dir, "val_manifest": self.val_manifest}

    @classmethod
    def from_dict(cls, data: dict, path: str = "paths") -> "RunPaths":
        _check_keys(data, ("train_manifest", "stats", "out_dir", "val_manifest"), path)
        for key in ("train_manifest", "stats", "out_dir"):
            if key not in data:
                raise ConfigError(f"missing required key {path}.{key}")
        return cls(data["train_manifest"], data["stats"], data["out_dir"],
                   data.get("val_manifest"))


RUN_CONFIG_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    """One training/enhancement run, fully described."""

    model: ModelConfig
    train: TrainConfig
    paths: RunPaths
    stft: StftConfig = field(default_factory=StftConfig)
    seed: int = 0
    version: int = RUN_CONFIG_VERSION

    def __post_init__(self):
        if self.version != RUN_CONFIG_VERSION:
            raise ConfigError(f"unsupported run config version {self.version}")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "seed": self.seed,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "stft": self.stft.to_dict(),
            "paths": self.paths.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _check_keys(data, ("version", "seed", "model", "train", "stft", "paths"), "")
        for key in ("model", "paths"):
            if key not in data:
                raise ConfigError(f"missing required key {key}")
        return cls(
            model=ModelConfig.from_dict(data["model"]),
            train=TrainConfig.from_dict(data.get("train", {})),
            paths=RunPaths.from_dict(data["paths"]),
            stft=StftConfig.from_dict(data.get("stft", {})),
            seed=int(data.get("seed", 0)),
            version=int(data.get("version", RUN_CONFIG_VERSION)),
        )
