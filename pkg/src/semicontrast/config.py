"""Experiment configuration: schema, defaults, parsing and overrides."""

from __future__ import annotations

import copy
import dataclasses
import os
import typing
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "SEMICONTRAST_OUTPUT_ROOT"

VARIANT_STAGES = {
    "random": (),
    "global": ("global",),
    "global+local(self)": ("global", "local_selfsup"),
    "local(stride)": ("local_supervised:stride",),
    "local(block)": ("local_supervised:block",),
    "global+local(stride)": ("global", "local_supervised:stride"),
    "global+local(block)": ("global", "local_supervised:block"),
}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending dotted path."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass(frozen=True)
class CorpusConfig:
    num_volumes: int = 200
    slices_per_volume: int = 8
    resolution: int = 32
    num_foreground_classes: int = 3
    noise: float = 0.35
    distractors: int = 2


@dataclass(frozen=True)
class DataConfig:
    preset: Optional[str] = "hippocampus"
    source: str = "synthetic"
    path: Optional[str] = None
    seed: int = 7
    resolution: int = 64
    ratios: tuple = (3.0, 1.0, 1.0)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    @property
    def normalized_ratios(self) -> tuple:
        total = sum(self.ratios)
        return tuple(r / total for r in self.ratios)


@dataclass(frozen=True)
class AugmentConfig:
    mode: str = "intensity_only"
    apply_prob: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    noise: float = 0.1
    blur_sigma: tuple = (0.1, 2.0)
    crop_scale: tuple = (0.7, 1.0)
    flip_prob: float = 0.5


@dataclass(frozen=True)
class ModelConfig:
    encoder_blocks: int = 3
    decoder_blocks: int = 3
    base_channels: int = 32
    num_classes: Optional[int] = None
    projection_dim: int = 128
    local_head_channels: int = 32
    normalize_local: bool = True


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    stride: int = 4
    block_size: int = 16
    scale_block_to_resolution: bool = True
    grid_points: int = 9
    level: int = 1
    positive_inside_log: bool = True

    def effective_block(self, resolution: int) -> int:
        """Block side for a given resolution; below 64 it shrinks proportionally."""
        if self.scale_block_to_resolution and resolution < 64:
            return max(1, self.block_size * resolution // 64)
        return self.block_size


@dataclass(frozen=True)
class ContrastStageConfig:
    learning_rate: float = 1e-4
    epochs: int = 70
    batch_pairs: int = 8
    augment_policy: Optional[str] = None


@dataclass(frozen=True)
class FinetuneConfig:
    learning_rate: float = 1e-5
    epochs: int = 120
    batch_size: int = 16
    val_every: int = 1


@dataclass(frozen=True)
class TrainingConfig:
    betas: tuple = (0.9, 0.999)
    threads: int = 1
    global_: ContrastStageConfig = field(default_factory=ContrastStageConfig)
    local: ContrastStageConfig = field(
        default_factory=lambda: ContrastStageConfig(augment_policy="intensity_only"))
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)


@dataclass(frozen=True)
class ExperimentSection:
    variants: tuple = tuple(VARIANT_STAGES)
    label_fractions: tuple = (0.05, 0.10, 0.20)
    folds: int = 4
    seed: int = 0
    output_dir: str = "runs/default"
    embed_per_class_cap: int = 200
    eval_batch_size: int = 64


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def to_dict(self) -> dict:
        return _to_plain(asdict(self))

    def replace(self, **overrides) -> "ExperimentConfig":
        raw = self.to_dict()
        for key, value in overrides.items():
            _set_path(raw, key.replace("__", "."), value)
        return _build(ExperimentConfig, raw, "")


# -- (de)serialization ------------------------------------------------------

def _yaml_key(name: str) -> str:
    return name[:-1] if name.endswith("_") else name


def _to_plain(obj):
    if isinstance(obj, dict):
        return {_yaml_key(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(tp, value, key: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, key)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(key, f"expected a section, got {value!r}")
        return _build(tp, value, key + ".")
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return tuple(_scalar(v, key) for v in value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    return value


def _scalar(v, key):
    if isinstance(v, (dict, list)):
        raise ConfigError(key, f"expected scalars in list, got {v!r}")
    return v


def _build(cls, raw: dict, prefix: str):
    hints = typing.get_type_hints(cls)
    names = {_yaml_key(f.name): f.name for f in dataclasses.fields(cls)}
    for k in raw:
        if k not in names:
            raise ConfigError(f"{prefix}{k}", "unknown key")
    kwargs = {}
    for yk, fname in names.items():
        if yk in raw:
            kwargs[fname] = _coerce(hints[fname], raw[yk], f"{prefix}{yk}")
    obj = cls(**kwargs)
    _validate(obj, prefix)
    return obj


def _check(cond: bool, key: str, value, rule: str):
    if not cond:
        raise ConfigError(key, f"{rule} (got {value!r})")


def _validate(obj, prefix: str) -> None:
    p = prefix
    if isinstance(obj, DataConfig):
        _check(obj.source in ("synthetic", "arrays"), p + "source", obj.source, "must be synthetic or arrays")
        _check(obj.source != "arrays" or bool(obj.path), p + "path", obj.path, "required when source = arrays")
        _check(len(obj.ratios) == 3 and all(r >= 0 for r in obj.ratios) and sum(obj.ratios) > 0,
               p + "ratios", obj.ratios, "must be three non-negative numbers")
        _check(obj.resolution >= 8, p + "resolution", obj.resolution, "must be >= 8")
    elif isinstance(obj, CorpusConfig):
        _check(obj.num_volumes >= 1, p + "num_volumes", obj.num_volumes, "must be >= 1")
        _check(obj.slices_per_volume >= 1, p + "slices_per_volume", obj.slices_per_volume, "must be >= 1")
        _check(1 <= obj.num_foreground_classes <= 7, p + "num_foreground_classes",
               obj.num_foreground_classes, "must be in [1, 7]")
        _check(obj.noise >= 0, p + "noise", obj.noise, "must be >= 0")
    elif isinstance(obj, AugmentConfig):
        _check(obj.mode in ("intensity_only", "intensity_and_spatial"), p + "mode", obj.mode,
               "must be intensity_only or intensity_and_spatial")
        _check(0 <= obj.apply_prob <= 1, p + "apply_prob", obj.apply_prob, "must be in [0, 1]")
        _check(len(obj.blur_sigma) == 2, p + "blur_sigma", obj.blur_sigma, "must be [lo, hi]")
        _check(len(obj.crop_scale) == 2 and 0 < obj.crop_scale[0] <= obj.crop_scale[1] <= 1,
               p + "crop_scale", obj.crop_scale, "must satisfy 0 < lo <= hi <= 1")
    elif isinstance(obj, ModelConfig):
        _check(obj.encoder_blocks == obj.decoder_blocks >= 1, p + "decoder_blocks", obj.decoder_blocks,
               "must equal encoder_blocks")
        _check(obj.projection_dim >= 2, p + "projection_dim", obj.projection_dim, "must be >= 2")
        _check(obj.num_classes is None or obj.num_classes >= 2, p + "num_classes", obj.num_classes,
               "must be >= 2")
    elif isinstance(obj, LossConfig):
        _check(obj.tau > 0, p + "tau", obj.tau, "must be > 0")
        _check(obj.stride >= 1, p + "stride", obj.stride, "must be >= 1")
        _check(obj.block_size >= 1, p + "block_size", obj.block_size, "must be >= 1")
        _check(obj.grid_points in (9, 13), p + "grid_points", obj.grid_points, "must be 9 or 13")
        _check(obj.level >= 1, p + "level", obj.level, "must be >= 1")
    elif isinstance(obj, ContrastStageConfig):
        _check(obj.learning_rate > 0, p + "learning_rate", obj.learning_rate, "must be > 0")
        _check(obj.epochs >= 1, p + "epochs", obj.epochs, "must be >= 1")
        _check(obj.batch_pairs >= 1, p + "batch_pairs", obj.batch_pairs, "must be >= 1")
        _check(obj.augment_policy in (None, "intensity_only", "intensity_and_spatial"),
               p + "augment_policy", obj.augment_policy, "must be intensity_only or intensity_and_spatial")
    elif isinstance(obj, FinetuneConfig):
        _check(obj.learning_rate > 0, p + "learning_rate", obj.learning_rate, "must be > 0")
        _check(obj.epochs >= 1, p + "epochs", obj.epochs, "must be >= 1")
        _check(obj.batch_size >= 1, p + "batch_size", obj.batch_size, "must be >= 1")
        _check(obj.val_every >= 1, p + "val_every", obj.val_every, "must be >= 1")
    elif isinstance(obj, ExperimentSection):
        for v in obj.variants:
            _check(v in VARIANT_STAGES, p + "variants", v, f"unknown variant; known: {list(VARIANT_STAGES)}")
        _check(len(obj.variants) >= 1, p + "variants", obj.variants, "must not be empty")
        _check(all(0 < f <= 1 for f in obj.label_fractions) and obj.label_fractions,
               p + "label_fractions", obj.label_fractions, "must be in (0, 1]")
        _check(obj.folds >= 1, p + "folds", obj.folds, "must be >= 1")
    elif isinstance(obj, ExperimentConfig):
        _check(obj.schema_version == SCHEMA_VERSION, "schema_version", obj.schema_version,
               f"unsupported; this build reads version {SCHEMA_VERSION}")
        _check(obj.losses.level <= obj.model.decoder_blocks, "losses.level", obj.losses.level,
               "must not exceed model.decoder_blocks")
        f = 2 ** obj.model.encoder_blocks
        _check(obj.data.resolution % f == 0, "data.resolution", obj.data.resolution,
               f"must be divisible by 2^encoder_blocks = {f}")


# -- loading ----------------------------------------------------------------

def load_defaults() -> dict:
    text = resources.files("semicontrast").joinpath("defaults.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (top or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(raw: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(dotted, f"{part} is not a section")
        node = nxt
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(text, "override must look like section.key=value")
    key, value = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(text, "empty override key")
    return key, yaml.safe_load(value) if value.strip() else None


def config_from_dict(user: dict, overrides=()) -> ExperimentConfig:
    defaults = load_defaults()
    presets = defaults.pop("presets", {})
    user = copy.deepcopy(user or {})
    if not isinstance(user, dict):
        raise ConfigError("<root>", "config file must contain a mapping")
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_path(user, key, value)

    merged = _merge(defaults, user)
    preset_name = (merged.get("data") or {}).get("preset")
    if preset_name is not None:
        if preset_name not in presets:
            raise ConfigError("data.preset", f"unknown preset {preset_name!r}; known: {sorted(presets)}")
        p = presets[preset_name]
        preset_layer = {"data": {"ratios": p["ratios"], "resolution": p["resolution"]},
                        "experiment": {"label_fractions": p["label_fractions"]}}
        merged = _merge(_merge(defaults, preset_layer), user)
    return _build(ExperimentConfig, merged, "")


def parse_config(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} not found")
    try:
        user = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"{path} is not valid YAML: {exc}") from None
    return config_from_dict(user, overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def echo_config(cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.yaml"
    path.write_text(dump_config(cfg))
    return path


def resolve_output_dir(cfg: ExperimentConfig) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(cfg.experiment.output_dir)
    if root and not out.is_absolute():
        return Path(root) / out
    return out
