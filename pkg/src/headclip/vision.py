"""Dual-path ViT image encoder: standard MHSA global path and a weighted-CSA local path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .diffcore import Tensor, ShapeError, as_tensor, concat, layer_norm, quick_gelu, softmax

HEAD_WEIGHTS = "local.head_weights"


@dataclass
class DualPathFeatures:
    f_global: Tensor  # [B, D]
    f_local: dict[int, Tensor]  # layer -> [B, N, D]


def _param(p: dict, name: str) -> Tensor:
    try:
        return p[name]
    except KeyError:
        raise KeyError(f"missing parameter {name!r}") from None


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """[B, H, W, C] -> [B, N, patch*patch*C], patches in row-major grid order."""
    b, h, w, c = images.shape
    g_h, g_w = h // patch, w // patch
    x = images.reshape(b, g_h, patch, g_w, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, g_h * g_w, patch * patch * c)


def _check_images(images, config: ModelConfig) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ShapeError("patch_embed (expected [H, W, 3] image)", images.shape)
    h, w = images.shape[1:3]
    if h != config.image_size or w != config.image_size:
        raise ValueError(
            f"image size mismatch: expected {config.image_size}x{config.image_size}, got {h}x{w}"
        )
    return images


def patch_embed(images, p: dict, config: ModelConfig) -> Tensor:
    """Images [B, H, W, 3] (or a single [H, W, 3]) to tokens [B, N+1, D] with CLS first."""
    images = _check_images(images, config)
    patches = Tensor(patchify(images, config.patch_size))
    tokens = patches @ _param(p, "vision.patch_proj")
    cls = _param(p, "vision.cls").reshape(1, 1, config.embed_dim)
    cls = cls + Tensor(np.zeros((images.shape[0], 1, 1)))
    return concat([cls, tokens], axis=1) + _param(p, "vision.pos")


def _split_heads(x: Tensor, h: int) -> Tensor:
    b, t, d = x.shape
    return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def _mlp_sublayer(x: Tensor, p: dict, prefix: str) -> Tensor:
    y = layer_norm(x, _param(p, f"{prefix}.ln2.gamma"), _param(p, f"{prefix}.ln2.beta"))
    y = quick_gelu(y @ _param(p, f"{prefix}.mlp.w1") + _param(p, f"{prefix}.mlp.b1"))
    return x + (y @ _param(p, f"{prefix}.mlp.w2") + _param(p, f"{prefix}.mlp.b2"))


def mhsa_block(tokens, p: dict, prefix: str, num_heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Pre-norm transformer block: MHSA sublayer then MLP sublayer, both residual.

    ``mask`` is an additive [T, T] attention bias (e.g. causal masking for text).
    """
    x = as_tensor(tokens)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.shape[-1] % num_heads:
        raise ShapeError("mhsa_block (D not divisible by heads)", x.shape, (num_heads,))
    y = layer_norm(x, _param(p, f"{prefix}.ln1.gamma"), _param(p, f"{prefix}.ln1.beta"))
    q = _split_heads(y @ _param(p, f"{prefix}.attn.wq") + _param(p, f"{prefix}.attn.bq"), num_heads)
    k = _split_heads(y @ _param(p, f"{prefix}.attn.wk") + _param(p, f"{prefix}.attn.bk"), num_heads)
    v = _split_heads(y @ _param(p, f"{prefix}.attn.wv") + _param(p, f"{prefix}.attn.bv"), num_heads)
    logits = (q @ k.T) * (1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        logits = logits + mask
    o = _merge_heads(softmax(logits, axis=-1) @ v)
    x = x + (o @ _param(p, f"{prefix}.attn.wo") + _param(p, f"{prefix}.attn.bo"))
    x = _mlp_sublayer(x, p, prefix)
    return x[0] if squeeze else x


def csa_attention(v) -> Tensor:
    """Consistent self-attention weights softmax(V V^T / sqrt(d_k)) over the last two axes."""
    v = as_tensor(v)
    return softmax((v @ v.T) * (1.0 / np.sqrt(v.shape[-1])), axis=-1)


def csa_head(v) -> Tensor:
    """CSA for one head (or a stack of heads): values attend to values."""
    v = as_tensor(v)
    if v.ndim < 2:
        raise ShapeError("csa_head", v.shape)
    return csa_attention(v) @ v


def csa_heads(tokens, p: dict, prefix: str, num_heads: int) -> Tensor:
    """Per-head CSA outputs [B, h, T, d_k] from the frozen value projection."""
    x = as_tensor(tokens)
    y = layer_norm(x, _param(p, f"{prefix}.ln1.gamma"), _param(p, f"{prefix}.ln1.beta"))
    v = _split_heads(y @ _param(p, f"{prefix}.attn.wv") + _param(p, f"{prefix}.attn.bv"), num_heads)
    return csa_head(v)


def mhcsa_block(tokens, p: dict, prefix: str, layer_weights, num_heads: int) -> Tensor:
    """Weighted multi-head CSA sublayer with residual: Z + Linear(Concat(w_i * CSA_i(LN(Z)))).

    ``layer_weights=None`` gives the unweighted variant.
    """
    x = as_tensor(tokens)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    heads = csa_heads(x, p, prefix, num_heads)
    if layer_weights is not None:
        w = as_tensor(layer_weights)
        if w.shape != (num_heads,):
            raise ShapeError("mhcsa_block (layer weights)", w.shape, (num_heads,))
        heads = heads * w.reshape(1, num_heads, 1, 1)
    o = _merge_heads(heads)
    x = x + (o @ _param(p, f"{prefix}.attn.wo") + _param(p, f"{prefix}.attn.bo"))
    return x[0] if squeeze else x


def local_block(tokens, p: dict, prefix: str, layer_weights, num_heads: int) -> Tensor:
    """One local-path layer inside the CSA range: MHCSA sublayer then the shared MLP sublayer."""
    x = mhcsa_block(tokens, p, prefix, layer_weights, num_heads)
    return _mlp_sublayer(x, p, prefix)


def project(tokens, p: dict) -> Tensor:
    """Map residual-stream tokens into the joint image-text space."""
    y = layer_norm(tokens, _param(p, "vision.ln_post.gamma"), _param(p, "vision.ln_post.beta"))
    return y @ _param(p, "vision.proj")


@dataclass
class FrozenPrefix:
    """Everything the local path needs that does not depend on trainable parameters."""

    f_global: Tensor  # [B, D]
    entry_tokens: Tensor | None  # [B, N+1, D] entering the first CSA layer
    early_features: dict[int, Tensor]  # feature layers preceding the CSA range


def frozen_prefix(images, p: dict, config: ModelConfig) -> FrozenPrefix:
    """Run the global path and capture where the local path diverges from it."""
    x = patch_embed(images, p, config)
    csa = config.csa_layers
    lo = csa[0] if csa else None
    entry, early = None, {}
    for layer in range(config.num_layers):
        if layer == lo:
            entry = x
        x = mhsa_block(x, p, f"vision.layer{layer}", config.num_heads)
        if layer in config.feature_layers and (lo is None or layer < lo):
            early[layer] = project(x[:, 1:, :], p)
    f_global = project(x[:, 0, :], p)
    return FrozenPrefix(f_global, entry, early)


def local_features(prefix: FrozenPrefix, p: dict, config: ModelConfig) -> dict[int, Tensor]:
    """Run the weight-dependent part of the local path from a cached prefix."""
    feats = dict(prefix.early_features)
    csa = config.csa_layers
    if not csa:
        return feats
    weights = _param(p, HEAD_WEIGHTS)
    x = prefix.entry_tokens
    last = max(config.feature_layers)
    for layer in range(csa[0], last + 1):
        name = f"vision.layer{layer}"
        if layer in csa:
            x = local_block(x, p, name, weights[layer - csa[0]], config.num_heads)
        else:
            x = mhsa_block(x, p, name, config.num_heads)
        if layer in config.feature_layers:
            feats[layer] = project(x[:, 1:, :], p)
    return feats


def encode_dual_path(images, p: dict, config: ModelConfig) -> DualPathFeatures:
    """Encode a batch [B, H, W, 3] (or one image) into global and per-layer local features."""
    prefix = frozen_prefix(images, p, config)
    return DualPathFeatures(prefix.f_global, local_features(prefix, p, config))
