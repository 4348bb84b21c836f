"""Training objective: global cross-entropy plus focal + Dice segmentation losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, TrainConfig
from .diffcore import Tensor, as_tensor, stack
from .scoring import _normalize, segmentation_maps, upsample_bilinear
from .text import TextEmbeddings, encode_prompts
from .vision import FrozenPrefix, frozen_prefix, local_features

PROB_CLAMP = 1e-7


def global_loss(sim_n, sim_a, y, tau: float) -> Tensor:
    """Two-class cross-entropy over (sim_n, sim_a) / tau; elementwise over a batch."""
    sim_n, sim_a = as_tensor(sim_n), as_tensor(sim_a)
    logits = stack([sim_n, sim_a], axis=-1) * (1.0 / tau)
    shift = Tensor(logits.data.max(axis=-1, keepdims=True))
    lse = (logits - shift).exp().sum(axis=-1).log() + shift[..., 0]
    y = np.asarray(y, dtype=np.float64)
    picked = logits[..., 0] * (1.0 - y) + logits[..., 1] * y
    return lse - picked


def focal_loss(s_n, s_a, mask, gamma: float) -> Tensor:
    """Pixel-mean focal loss over the trailing [H, W] axes.

    p_t is S_a on anomalous pixels and S_n on normal ones, clamped before the log.
    """
    s_n, s_a = as_tensor(s_n), as_tensor(s_a)
    g = np.asarray(mask, dtype=np.float64)
    p_t = (s_a * g + s_n * (1.0 - g)).clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_pixel = -((1.0 - p_t) ** gamma) * p_t.log() if gamma != 0 else -p_t.log()
    return per_pixel.mean(axis=(-2, -1))


def dice_loss(pred, target, epsilon: float) -> Tensor:
    """1 - (2 sum(pred*target) + eps) / (sum(pred) + sum(target) + eps) over [H, W]."""
    if epsilon < 0:
        raise ValueError("dice epsilon must be non-negative")
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=np.float64)
    inter = (pred * t).sum(axis=(-2, -1))
    denom = pred.sum(axis=(-2, -1)) + t.sum(axis=(-2, -1)) + epsilon
    if np.any(denom.data == 0):
        raise ValueError("dice loss undefined: empty prediction and target with epsilon = 0")
    return 1.0 - (inter * 2.0 + epsilon) / denom


def local_loss(s_n, s_a, mask, gamma: float, epsilon: float) -> Tensor:
    """Focal + Dice(normal, 1-G) + Dice(abnormal, G) for one layer at mask resolution."""
    s_n, s_a = as_tensor(s_n), as_tensor(s_a)
    mask = np.asarray(mask, dtype=np.float64)
    if s_n.shape[-2:] != mask.shape[-2:] or s_a.shape != s_n.shape:
        raise ValueError(f"resolution mismatch: maps {s_n.shape}, {s_a.shape} vs mask {mask.shape}")
    return (
        focal_loss(s_n, s_a, mask, gamma)
        + dice_loss(s_n, 1.0 - mask, epsilon)
        + dice_loss(s_a, mask, epsilon)
    )


@dataclass
class LossParts:
    total: Tensor
    global_part: float
    local_part: float


def loss_from_prefix(
    prefix: FrozenPrefix,
    labels,
    masks,
    p: dict,
    config: ModelConfig,
    train: TrainConfig,
    text: TextEmbeddings | None = None,
) -> LossParts:
    """Batch-mean of global_loss + lambda * sum over feature layers of local_loss."""
    labels = np.asarray(labels, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("empty batch")
    tau = config.temperature
    text = encode_prompts(p, config) if text is None else text
    f_g = _normalize(prefix.f_global, "global")
    sim_n = f_g @ _normalize(as_tensor(text.f_normal), "text")
    sim_a = f_g @ _normalize(as_tensor(text.f_abnormal), "text")
    g_loss = global_loss(sim_n, sim_a, labels, tau)
    h, w = masks.shape[-2:]
    l_loss = None
    if train.lam != 0:
        feats = local_features(prefix, p, config)
        for layer in config.feature_layers:
            s_n, s_a = segmentation_maps(feats[layer], text, tau)
            term = local_loss(
                upsample_bilinear(s_n, h, w),
                upsample_bilinear(s_a, h, w),
                masks,
                train.focal_gamma,
                train.dice_epsilon,
            )
            l_loss = term if l_loss is None else l_loss + term
    per_sample = g_loss if l_loss is None else g_loss + l_loss * train.lam
    local_mean = 0.0 if l_loss is None else float(l_loss.data.mean())
    return LossParts(per_sample.mean(), float(g_loss.data.mean()), local_mean)


def total_loss(images, labels, masks, p: dict, config: ModelConfig, train: TrainConfig) -> Tensor:
    """Full objective for a batch of images [B, H, W, 3] with labels [B] and masks [B, H, W]."""
    prefix = frozen_prefix(images, p, config)
    return loss_from_prefix(prefix, labels, masks, p, config, train).total
