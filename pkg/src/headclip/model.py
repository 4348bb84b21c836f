"""Model state: frozen backbone parameters plus the learnable head weights and prompts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .diffcore import ParamSet
from .text import ABNORMAL, CONTEXT_LEN, DEEP, NORMAL, PromptState
from .vision import HEAD_WEIGHTS


def _linear_std(config: ModelConfig, fan_in: int) -> float:
    if config.init_scheme == "fan_in":
        return 1.0 / np.sqrt(fan_in)
    return config.init_std


def _block_params(rng, prefix: str, config: ModelConfig) -> dict:
    d = config.embed_dim
    hidden = d * config.mlp_ratio
    std, std_h = _linear_std(config, d), _linear_std(config, hidden)
    out = {
        f"{prefix}.ln1.gamma": np.ones(d),
        f"{prefix}.ln1.beta": np.zeros(d),
        f"{prefix}.ln2.gamma": np.ones(d),
        f"{prefix}.ln2.beta": np.zeros(d),
        f"{prefix}.mlp.w1": rng.normal(0.0, std, (d, hidden)),
        f"{prefix}.mlp.b1": np.zeros(hidden),
        f"{prefix}.mlp.w2": rng.normal(0.0, std_h, (hidden, d)),
        f"{prefix}.mlp.b2": np.zeros(d),
    }
    for name in ("q", "k", "v", "o"):
        out[f"{prefix}.attn.w{name}"] = rng.normal(0.0, std, (d, d))
        out[f"{prefix}.attn.b{name}"] = np.zeros(d)
    return out


def init_head_weights(config: ModelConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    shape = (len(config.csa_layers), config.num_heads)
    if config.head_init == "gaussian":
        rng = rng if rng is not None else np.random.default_rng(config.init_seed)
        return rng.normal(0.0, 1.0, shape)
    return np.full(shape, float(config.head_init))


def init_params(config: ModelConfig) -> ParamSet:
    """Seeded Gaussian backbone; head weights per ``head_init``; prompts N(0, init_std).

    Linear maps use std 1/sqrt(fan_in) under ``init_scheme = fan_in`` and ``init_std``
    otherwise; embedding tables always use ``init_std``.
    """
    rng = np.random.default_rng(config.init_seed)
    d, std = config.embed_dim, config.init_std
    patch_dim = config.patch_size**2 * 3
    arrays = {
        "vision.patch_proj": rng.normal(0.0, _linear_std(config, patch_dim), (patch_dim, d)),
        "vision.cls": rng.normal(0.0, std, d),
        "vision.pos": rng.normal(0.0, std, (config.num_patches + 1, d)),
        "vision.ln_post.gamma": np.ones(d),
        "vision.ln_post.beta": np.zeros(d),
        "vision.proj": rng.normal(0.0, _linear_std(config, d), (d, d)),
    }
    for layer in range(config.num_layers):
        arrays.update(_block_params(rng, f"vision.layer{layer}", config))
    arrays.update(
        {
            "text.token_embedding": rng.normal(0.0, std, (config.vocab_size, d)),
            "text.pos": rng.normal(0.0, std, (CONTEXT_LEN, d)),
            "text.ln_final.gamma": np.ones(d),
            "text.ln_final.beta": np.zeros(d),
            "text.proj": rng.normal(0.0, _linear_std(config, d), (d, d)),
        }
    )
    for layer in range(config.text_layers):
        arrays.update(_block_params(rng, f"text.layer{layer}", config))

    params = ParamSet(arrays)
    params.add(NORMAL, rng.normal(0.0, std, (config.text_prompt_len, d)), trainable=True)
    params.add(ABNORMAL, rng.normal(0.0, std, (config.text_prompt_len, d)), trainable=True)
    params.add(DEEP, rng.normal(0.0, std, (config.prompt_depth, config.n_deep, d)), trainable=True)
    params.add(HEAD_WEIGHTS, init_head_weights(config, rng), trainable=True)
    return params


@dataclass
class HeadCLIPState:
    config: ModelConfig
    params: ParamSet

    @classmethod
    def initialize(cls, config: ModelConfig) -> "HeadCLIPState":
        return cls(config, init_params(config))

    @property
    def head_weights(self) -> np.ndarray:
        return self.params[HEAD_WEIGHTS]

    @property
    def prompts(self) -> PromptState:
        return PromptState.from_params(self.params)

    def tensors(self, track: bool = False) -> dict:
        return self.params.tensors(track=track)

    def copy(self) -> "HeadCLIPState":
        return HeadCLIPState(self.config, self.params.copy())
