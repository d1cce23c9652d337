"""Model and training configuration.

Configs are plain dataclasses that round-trip through JSON. Validation errors
carry the offending field name so the CLI can report them directly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

MLFM_MODES = ("off", "concat", "full")
DEM_MODES = ("off", "no_meem", "full")


class ConfigError(ValueError):
    """Invalid configuration value."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class EncoderConfig:
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    patch_size: int = 16
    mlp_ratio: float = 4.0
    tap_indices: tuple[int, ...] = (3, 6, 9, 12)
    freeze: bool = True


@dataclass
class AdapterConfig:
    enabled: bool = True
    reduction: int = 3
    pool_scales: tuple[int, ...] = (3, 6, 9, 12)
    zero_init_up: bool = True
    use_local: bool = True


@dataclass
class DecoderConfig:
    transformer_dim: int = 256
    depth: int = 2
    num_heads: int = 8
    mlp_dim: int = 2048
    upscale_dims: tuple[int, int] = (64, 32)
    attention_downsample: int = 2


@dataclass
class DEMConfig:
    local_dim: int = 32
    reduce_dim: int = 64
    up_dim: int = 32
    head_dim: int = 32


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    dem_widths: DEMConfig = field(default_factory=DEMConfig)
    mlfm: str = "full"
    dem: str = "full"
    resolution: int = 512
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def grid_size(self) -> int:
        return self.resolution // self.encoder.patch_size

    def validate(self) -> None:
        enc, ad, dec = self.encoder, self.adapter, self.decoder
        for name, value in [
            ("encoder.embed_dim", enc.embed_dim),
            ("encoder.depth", enc.depth),
            ("encoder.num_heads", enc.num_heads),
            ("encoder.patch_size", enc.patch_size),
            ("adapter.reduction", ad.reduction),
            ("decoder.transformer_dim", dec.transformer_dim),
            ("decoder.num_heads", dec.num_heads),
            ("resolution", self.resolution),
        ]:
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(name, f"must be a positive integer, got {value!r}")
        if enc.embed_dim % enc.num_heads:
            raise ConfigError("encoder.num_heads", "must divide embed_dim")
        if len(enc.tap_indices) != 4:
            raise ConfigError("encoder.tap_indices", "exactly four tap layers are required")
        if list(enc.tap_indices) != sorted(set(enc.tap_indices)):
            raise ConfigError("encoder.tap_indices", "must be strictly ascending")
        if enc.tap_indices[0] < 1 or enc.tap_indices[-1] > enc.depth:
            raise ConfigError("encoder.tap_indices", f"must lie in [1, {enc.depth}]")
        if self.resolution % enc.patch_size:
            raise ConfigError("resolution", f"must be divisible by patch size {enc.patch_size}")
        if ad.enabled:
            if enc.embed_dim % (4 * ad.reduction):
                raise ConfigError("adapter.reduction", "4 * reduction must divide embed_dim")
            if len(ad.pool_scales) != 4:
                raise ConfigError("adapter.pool_scales", "exactly four pooling scales are required")
            for s in ad.pool_scales:
                if s <= 0 or s > self.grid_size:
                    raise ConfigError(
                        "adapter.pool_scales",
                        f"scale {s} outside [1, grid side {self.grid_size}]",
                    )
        if self.mlfm not in MLFM_MODES:
            raise ConfigError("mlfm", f"must be one of {MLFM_MODES}")
        if self.dem not in DEM_MODES:
            raise ConfigError("dem", f"must be one of {DEM_MODES}")
        if dec.transformer_dim % dec.num_heads:
            raise ConfigError("decoder.num_heads", "must divide transformer_dim")
        if (dec.transformer_dim // dec.attention_downsample) % dec.num_heads:
            raise ConfigError("decoder.attention_downsample", "downsampled width must divide into heads")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return _build(cls, data, "")

    def hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def sam_b(cls, **overrides) -> "ModelConfig":
        """SAM-B shaped configuration used for parameter accounting."""
        return _with_overrides(cls(), overrides)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Small configuration that trains in minutes on a CPU."""
        cfg = cls(
            encoder=EncoderConfig(embed_dim=64, depth=4, num_heads=4, tap_indices=(1, 2, 3, 4)),
            adapter=AdapterConfig(reduction=2, pool_scales=(1, 2, 3, 4)),
            decoder=DecoderConfig(transformer_dim=32, depth=2, num_heads=2, mlp_dim=64, upscale_dims=(16, 16)),
            dem_widths=DEMConfig(local_dim=16, reduce_dim=32, up_dim=16, head_dim=16),
            resolution=64,
        )
        return _with_overrides(cfg, overrides)


@dataclass
class TrainConfig:
    lr_pretrained: float = 5e-5
    lr_new: float = 5e-4
    weight_decay: float = 1e-4
    warmup_epochs: int = 5
    max_epochs: int = 80
    batch_size: int = 16
    optimizer: str = "adamw"
    grad_clip: float | None = 1.0
    augment: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("lr_pretrained", "lr_new", "max_epochs", "batch_size"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigError(name, f"must be positive, got {value!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be non-negative")
        if not 0 <= self.warmup_epochs <= self.max_epochs:
            raise ConfigError("warmup_epochs", "must lie in [0, max_epochs]")
        if self.optimizer != "adamw":
            raise ConfigError("optimizer", "only 'adamw' is supported")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip", "must be positive or null")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _build(cls, data, "")


def config_hash(data: Any) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _with_overrides(cfg, overrides: dict):
    if not overrides:
        return cfg
    merged = _deep_merge(cfg.to_dict(), overrides)
    return type(cfg).from_dict(merged)


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or cls.__name__, "expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        name = prefix + sorted(unknown)[0]
        raise ConfigError(name, "unknown field")
    kwargs = {}
    for name, value in data.items():
        ftype = _resolve(known[name].type)
        if dataclasses.is_dataclass(ftype):
            kwargs[name] = _build(ftype, value, f"{prefix}{name}.")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as err:
        if prefix and not err.field.startswith(prefix):
            raise ConfigError(prefix + err.field, str(err).split(": ", 1)[1]) from None
        raise
    except TypeError as err:
        raise ConfigError(prefix.rstrip(".") or cls.__name__, str(err)) from None


_NESTED = {
    "EncoderConfig": EncoderConfig,
    "AdapterConfig": AdapterConfig,
    "DecoderConfig": DecoderConfig,
    "DEMConfig": DEMConfig,
}


def _resolve(annotation):
    if isinstance(annotation, str):
        return _NESTED.get(annotation, annotation)
    return annotation
