"""Miniature causal text encoder with class-agnostic learnable prompts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .diffcore import Tensor, as_tensor, concat, layer_norm
from .vision import mhsa_block

# Fixed toy vocabulary entries. The only words ever fed to the prompts are
# "object" and "damaged"; everything else is free for probe sequences.
PAD, OBJECT, DAMAGED, EOT = 0, 1, 2, 3
NORMAL_SUFFIX = (OBJECT, EOT)
ABNORMAL_SUFFIX = (DAMAGED, OBJECT, EOT)
CONTEXT_LEN = 16

NORMAL = "prompt.normal"
ABNORMAL = "prompt.abnormal"
DEEP = "prompt.deep"


@dataclass
class PromptState:
    normal_tokens: np.ndarray  # [M_t, D_text]
    abnormal_tokens: np.ndarray  # [M_t, D_text]
    deep_tokens: np.ndarray  # [L_t, n_deep, D_text]
    normal_suffix: tuple[int, ...] = NORMAL_SUFFIX
    abnormal_suffix: tuple[int, ...] = ABNORMAL_SUFFIX

    @classmethod
    def from_params(cls, params) -> "PromptState":
        return cls(params[NORMAL].copy(), params[ABNORMAL].copy(), params[DEEP].copy())


@dataclass
class TextEmbeddings:
    f_normal: Tensor  # [D]
    f_abnormal: Tensor  # [D]


def _causal_mask(t: int) -> np.ndarray:
    return np.triu(np.full((t, t), -1e9), k=1)


def encode_sequence(ids, p: dict, config: ModelConfig, learned=None, deep=None) -> Tensor:
    """Encode ``[deep slots | learned tokens | embed(ids)]`` and pool the final position.

    ``deep`` holds one [n_deep, D_text] block per prompted layer; block 0 fills the
    leading slots at the input and block l overwrites them before layer l.
    """
    ids = [int(i) for i in ids]
    if not ids:
        raise ValueError("empty token sequence")
    bad = [i for i in ids if not 0 <= i < config.vocab_size]
    if bad:
        raise ValueError(f"token id {bad[0]} out of range for vocabulary of {config.vocab_size}")
    parts = []
    n_deep = 0
    if deep is not None:
        deep = as_tensor(deep)
        n_deep = deep.shape[1]
        parts.append(deep[0])
    if learned is not None:
        parts.append(as_tensor(learned))
    parts.append(as_tensor(p["text.token_embedding"])[np.array(ids)])
    x = concat(parts, axis=0)
    t = x.shape[0]
    if t > CONTEXT_LEN:
        raise ValueError(f"sequence of {t} tokens exceeds context length {CONTEXT_LEN}")
    x = x + as_tensor(p["text.pos"])[:t]
    mask = _causal_mask(t)
    for layer in range(config.text_layers):
        if deep is not None and 0 < layer < deep.shape[0]:
            x = concat([deep[layer], x[n_deep:]], axis=0)
        x = mhsa_block(x, p, f"text.layer{layer}", config.num_heads, mask=mask)
    pooled = layer_norm(x[t - 1], p["text.ln_final.gamma"], p["text.ln_final.beta"])
    return pooled @ p["text.proj"]


def encode_prompts(p: dict, config: ModelConfig, prompts: PromptState | None = None) -> TextEmbeddings:
    """Normal / abnormal embeddings from the learnable prompt tokens.

    Reads prompt tokens from ``p`` (so gradients flow) unless ``prompts`` is given.
    """
    if prompts is None:
        normal, abnormal = p[NORMAL], p[ABNORMAL]
        deep = p[DEEP] if config.prompt_depth > 0 else None
        n_suffix, a_suffix = NORMAL_SUFFIX, ABNORMAL_SUFFIX
    else:
        normal, abnormal = prompts.normal_tokens, prompts.abnormal_tokens
        deep = prompts.deep_tokens if config.prompt_depth > 0 else None
        n_suffix, a_suffix = prompts.normal_suffix, prompts.abnormal_suffix
    f_n = encode_sequence(n_suffix, p, config, learned=normal, deep=deep)
    f_a = encode_sequence(a_suffix, p, config, learned=abnormal, deep=deep)
    return TextEmbeddings(f_n, f_a)


def cosine_sim(a, b) -> float:
    """Cosine similarity of two nonzero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
