"""Model and training hyperparameters plus the flat ``key = value`` config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    # Toy scaling of a ViT-L/14 at 518px: 24 layers / 16 heads, CSA on 5-19,
    # features from blocks 6, 12, 18, 24.
    image_size: int = 32
    patch_size: int = 4
    embed_dim: int = 32
    num_heads: int = 4
    num_layers: int = 4
    mlp_ratio: int = 4
    csa_layer_range: tuple[int, int] | None = (1, 3)
    feature_layers: tuple[int, ...] = (1, 3)
    # text side
    vocab_size: int = 64
    text_layers: int = 2
    text_prompt_len: int = 4
    prompt_depth: int = 1
    n_deep: int = 4
    # scoring
    temperature: float = 0.07
    gaussian_sigma: float = 1.0
    jas_ratio: float = 0.5
    topk_ratio: float = 0.05
    # initialization
    head_init: str = "1.0"
    init_std: float = 0.02
    init_scheme: str = "fan_in"
    init_seed: int = 0

    def __post_init__(self):
        if self.image_size <= 0 or self.patch_size <= 0:
            raise ConfigError("image_size and patch_size must be positive")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.csa_layer_range is not None:
            lo, hi = self.csa_layer_range
            if not (0 <= lo <= hi < self.num_layers):
                raise ConfigError(f"csa_layer_range {self.csa_layer_range} outside [0, {self.num_layers})")
        if not self.feature_layers:
            raise ConfigError("feature_layers must not be empty")
        if any(not 0 <= l < self.num_layers for l in self.feature_layers):
            raise ConfigError(f"feature_layers {self.feature_layers} outside [0, {self.num_layers})")
        if tuple(sorted(set(self.feature_layers))) != tuple(self.feature_layers):
            raise ConfigError("feature_layers must be strictly increasing")
        if not 0.0 <= self.jas_ratio <= 1.0:
            raise ConfigError(f"jas_ratio must lie in [0, 1], got {self.jas_ratio}")
        if not 0.0 < self.topk_ratio <= 1.0:
            raise ConfigError(f"topk_ratio must lie in (0, 1], got {self.topk_ratio}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.gaussian_sigma < 0:
            raise ConfigError("gaussian_sigma must be non-negative")
        if not 0 <= self.prompt_depth <= self.text_layers:
            raise ConfigError("prompt_depth must lie in [0, text_layers]")
        if self.text_prompt_len < 1 or self.n_deep < 0:
            raise ConfigError("text_prompt_len must be >= 1 and n_deep >= 0")
        if self.init_scheme not in ("fan_in", "fixed"):
            raise ConfigError(f"init_scheme must be 'fan_in' or 'fixed', got {self.init_scheme!r}")
        if self.head_init != "gaussian":
            try:
                float(self.head_init)
            except ValueError:
                raise ConfigError(f"head_init must be 'gaussian' or a number, got {self.head_init!r}") from None

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid**2

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def csa_layers(self) -> tuple[int, ...]:
        if self.csa_layer_range is None:
            return ()
        lo, hi = self.csa_layer_range
        return tuple(range(lo, hi + 1))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 8
    learning_rate: float = 1e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 111
    lam: float = 1.0
    focal_gamma: float = 2.0
    dice_epsilon: float = 1.0
    learn_head_weights: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise ConfigError(f"Adam betas must lie in (0, 1), got {b}")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.focal_gamma < 0 or self.dice_epsilon < 0:
            raise ConfigError("focal_gamma and dice_epsilon must be non-negative")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---- flat text format -------------------------------------------------------

_ALIASES = {"lambda": "lam"}


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(f: dataclasses.Field, raw: str):
    raw = raw.strip()
    name = f.name
    try:
        if name == "csa_layer_range":
            if raw.lower() in ("none", ""):
                return None
            lo, hi = (int(v) for v in raw.replace("-", ",").split(","))
            return (lo, hi)
        if name == "feature_layers":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if f.type in ("bool", bool):
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if f.type in ("int", int):
            return int(raw)
        if f.type in ("float", float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str) -> tuple[ModelConfig, TrainConfig]:
    """Parse ``key = value`` lines; section headers and ``#`` comments are ignored."""
    model_fields = {f.name: f for f in fields(ModelConfig)}
    train_fields = {f.name: f for f in fields(TrainConfig)}
    model_kw, train_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key in model_fields:
            model_kw[key] = _parse_value(model_fields[key], raw)
        elif key in train_fields:
            train_kw[key] = _parse_value(train_fields[key], raw)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return ModelConfig(**model_kw), TrainConfig(**train_kw)


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def format_config(model: ModelConfig, train: TrainConfig | None = None) -> str:
    lines = ["[model]"]
    lines += [f"{f.name} = {_format_value(getattr(model, f.name))}" for f in fields(model)]
    if train is not None:
        lines.append("[train]")
        lines += [f"{f.name} = {_format_value(getattr(train, f.name))}" for f in fields(train)]
    return "\n".join(lines) + "\n"


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return {f.name: _format_value(getattr(cfg, f.name)) for f in fields(cfg)}


def model_config_from_dict(d: dict) -> ModelConfig:
    model_fields = {f.name: f for f in fields(ModelConfig)}
    kw = {}
    for k, v in d.items():
        if k not in model_fields:
            raise ConfigError(f"unknown model config key {k!r}")
        kw[k] = _parse_value(model_fields[k], v)
    return ModelConfig(**kw)
