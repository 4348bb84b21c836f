"""Anomaly maps and image scores: segmentation maps, local map, top-k mean, joint score."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import ModelConfig
from .diffcore import Tensor, as_tensor, softmax, stack
from .text import TextEmbeddings, encode_prompts
from .vision import encode_dual_path


@dataclass(frozen=True)
class ScoreBreakdown:
    s_global: float
    s_local_topk: float
    s_joint: float


def _normalize(x: Tensor, what: str) -> Tensor:
    norm = (x * x).sum(axis=-1, keepdims=True).sqrt()
    if np.any(norm.data == 0):
        raise ValueError(f"zero-norm {what} feature")
    return x / norm


def _two_class(features, text: TextEmbeddings, tau: float, what: str) -> Tensor:
    """Softmax over (cos to F_N, cos to F_A) / tau; last axis is (normal, abnormal)."""
    f = _normalize(as_tensor(features), what)
    n = _normalize(as_tensor(text.f_normal), "text")
    a = _normalize(as_tensor(text.f_abnormal), "text")
    logits = stack([f @ n, f @ a], axis=-1) * (1.0 / tau)
    return softmax(logits, axis=-1)


def segmentation_maps(f_local, text: TextEmbeddings, tau: float) -> tuple[Tensor, Tensor]:
    """Per-patch normal/abnormal probabilities reshaped to the patch grid.

    ``f_local`` is [N, D] or [B, N, D]; outputs are [g, g] or [B, g, g].
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    f_local = as_tensor(f_local)
    n = f_local.shape[-2]
    g = math.isqrt(n)
    if g * g != n:
        raise ValueError(f"number of patches {n} is not a perfect square")
    probs = _two_class(f_local, text, tau, "patch")
    lead = f_local.shape[:-2]
    return probs[..., 0].reshape(*lead, g, g), probs[..., 1].reshape(*lead, g, g)


def global_score(f_global, text: TextEmbeddings, tau: float) -> Tensor:
    """Probability of the abnormal class from the global feature (scalar or [B])."""
    return _two_class(f_global, text, tau, "global")[..., 1]


# ---- resampling ------------------------------------------------------------


@lru_cache(maxsize=64)
def bilinear_matrix(src: int, dst: int) -> np.ndarray:
    """[dst, src] interpolation weights, half-pixel centers (align_corners=False)."""
    if src < 1 or dst < 1:
        raise ValueError("sizes must be positive")
    m = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        x = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(x)), src - 1)
        i1 = min(i0 + 1, src - 1)
        frac = x - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m.setflags(write=False)
    return m


def upsample_bilinear(grid_map, h: int, w: int):
    """Bilinear resize of the trailing two axes to [h, w]; keeps Tensors differentiable."""
    is_tensor = isinstance(grid_map, Tensor)
    x = as_tensor(grid_map)
    gh, gw = x.shape[-2:]
    out = Tensor(bilinear_matrix(gh, h)) @ x @ Tensor(bilinear_matrix(gw, w).T)
    return out if is_tensor else out.data


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _reflect_index(i: int, n: int) -> int:
    # half-sample symmetric: ... b a | a b c ... c b a | a ...
    period = 2 * n
    i %= period
    return i if i < n else period - 1 - i


@lru_cache(maxsize=64)
def gaussian_matrix(n: int, sigma: float) -> np.ndarray:
    """[n, n] operator applying the 1-D Gaussian with symmetric border reflection."""
    k = gaussian_kernel(sigma)
    radius = len(k) // 2
    m = np.zeros((n, n))
    for i in range(n):
        for j, wgt in enumerate(k):
            m[i, _reflect_index(i + j - radius, n)] += wgt
    m.setflags(write=False)
    return m


def gaussian_smooth(image_map, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of the trailing two axes; sigma=0 returns the input."""
    x = np.asarray(image_map, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return x.copy()
    h, w = x.shape[-2:]
    return gaussian_matrix(h, float(sigma)) @ x @ gaussian_matrix(w, float(sigma)).T


# ---- maps and scores -------------------------------------------------------


def local_anomaly_map(layer_maps, h: int, w: int, sigma: float) -> np.ndarray:
    """Average over layers of 0.5*(1 - Up(S_n)) + 0.5*Up(S_a), then Gaussian smoothing."""
    layer_maps = list(layer_maps)
    if not layer_maps:
        raise ValueError("local_anomaly_map needs at least one layer")
    acc = None
    for s_n, s_a in layer_maps:
        s_n = s_n.data if isinstance(s_n, Tensor) else np.asarray(s_n, dtype=np.float64)
        s_a = s_a.data if isinstance(s_a, Tensor) else np.asarray(s_a, dtype=np.float64)
        term = 0.5 * (1.0 - upsample_bilinear(s_n, h, w)) + 0.5 * upsample_bilinear(s_a, h, w)
        acc = term if acc is None else acc + term
    out = gaussian_smooth(acc / len(layer_maps), sigma)
    return np.clip(out, 0.0, 1.0)


def topk_count(k: float, n: int) -> int:
    if not 0.0 < k <= 1.0:
        raise ValueError(f"top-k ratio must lie in (0, 1], got {k}")
    return max(1, int(math.floor(k * n + 1e-9)))


def topk_mean(anomaly_map, k: float) -> float:
    """Mean of the largest max(1, floor(k * size)) values."""
    values = np.asarray(anomaly_map, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("top-k mean of an empty map")
    m = topk_count(k, values.size)
    top = np.partition(values, values.size - m)[values.size - m :]
    return float(np.sort(top).mean())


def joint_score(s_global: float, s_local_topk: float, r: float) -> float:
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"joint score ratio must lie in [0, 1], got {r}")
    return r * s_global + (1.0 - r) * s_local_topk


def score_batch(
    images,
    state,
    r: float | None = None,
    k: float | None = None,
    batch_size: int = 32,
) -> tuple[np.ndarray, list[ScoreBreakdown]]:
    """Anomaly maps [B, H, W] and score breakdowns for a batch of images."""
    config: ModelConfig = state.config
    r = config.jas_ratio if r is None else r
    k = config.topk_ratio if k is None else k
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    p = state.tensors(track=False)
    text = encode_prompts(p, config)
    maps, breakdowns = [], []
    h = w = config.image_size
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        feats = encode_dual_path(chunk, p, config)
        per_layer = [segmentation_maps(feats.f_local[l], text, config.temperature) for l in config.feature_layers]
        amap = local_anomaly_map(per_layer, h, w, config.gaussian_sigma)
        s_g = global_score(feats.f_global, text, config.temperature).data
        for i in range(len(chunk)):
            s_l = topk_mean(amap[i], k)
            sg = float(s_g[i])
            breakdowns.append(ScoreBreakdown(sg, s_l, joint_score(sg, s_l, r)))
        maps.append(amap)
    return np.concatenate(maps, axis=0), breakdowns


def score_image(image, state, r: float | None = None, k: float | None = None) -> tuple[np.ndarray, ScoreBreakdown]:
    """Score one [H, W, 3] image: its anomaly map and (S_g, top-k local mean, S_j)."""
    maps, breakdowns = score_batch(np.asarray(image)[None], state, r=r, k=k)
    return maps[0], breakdowns[0]
