"""Backbone-frozen Adam training on an auxiliary labeled dataset."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .diffcore import Tensor, backward
from .losses import loss_from_prefix
from .model import HeadCLIPState
from .text import encode_prompts
from .vision import HEAD_WEIGHTS, FrozenPrefix, frozen_prefix

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    mean_total: float
    mean_global: float
    mean_local: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.mean_total:.10f}\t{self.mean_global:.10f}\t{self.mean_local:.10f}"


@dataclass
class Adam:
    lr: float
    beta1: float
    beta2: float
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name in sorted(grads):
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * params[name]
            m = self.m.get(name, np.zeros_like(g)) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(name, np.zeros_like(g)) * self.beta2 + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples]).astype(np.float64)
    masks = np.stack([s.mask for s in samples]).astype(np.float64)
    labels = np.array([s.label for s in samples], dtype=np.float64)
    return images, labels, masks


def _slice_prefix(prefix: FrozenPrefix, idx: np.ndarray) -> FrozenPrefix:
    entry = None if prefix.entry_tokens is None else Tensor(prefix.entry_tokens.data[idx])
    early = {k: Tensor(v.data[idx]) for k, v in prefix.early_features.items()}
    return FrozenPrefix(Tensor(prefix.f_global.data[idx]), entry, early)


def compute_prefix(state: HeadCLIPState, images: np.ndarray, chunk: int = 64) -> FrozenPrefix:
    """Frozen-path features for a whole dataset, computed once."""
    p = state.tensors(track=False)
    parts = [frozen_prefix(images[i : i + chunk], p, state.config) for i in range(0, len(images), chunk)]
    entry = None
    if parts[0].entry_tokens is not None:
        entry = Tensor(np.concatenate([q.entry_tokens.data for q in parts]))
    early = {k: Tensor(np.concatenate([q.early_features[k].data for q in parts])) for k in parts[0].early_features}
    return FrozenPrefix(Tensor(np.concatenate([q.f_global.data for q in parts])), entry, early)


def trainable_names(state: HeadCLIPState, train: TrainConfig) -> list[str]:
    names = state.params.trainable_names()
    if not train.learn_head_weights:
        names = [n for n in names if n != HEAD_WEIGHTS]
    return names


def train(samples, state: HeadCLIPState, train_cfg: TrainConfig, progress=None) -> tuple[HeadCLIPState, list[EpochRecord]]:
    """Optimize head weights and prompt tokens with Adam; returns the final-epoch state.

    With ``learn_head_weights`` off, head weights are pinned to 1 and never updated.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("training dataset is empty")
    state = state.copy()
    if not train_cfg.learn_head_weights:
        state.params[HEAD_WEIGHTS] = np.ones_like(state.params[HEAD_WEIGHTS])
    config = state.config
    images, labels, masks = stack_samples(samples)
    prefix = compute_prefix(state, images)
    names = trainable_names(state, train_cfg)
    opt = Adam(train_cfg.learning_rate, train_cfg.adam_beta1, train_cfg.adam_beta2,
               train_cfg.adam_eps, train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    values = {n: state.params[n].copy() for n in names}
    n = len(samples)
    records = []
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        tot = glob = loc = 0.0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            step += 1
            p = state.tensors(track=False)
            for name in names:
                p[name] = Tensor(values[name], requires_grad=True, name=name)
            try:
                # overflow anywhere in the step is a divergence, not a data problem
                with np.errstate(over="raise", invalid="raise", divide="raise"):
                    text = encode_prompts(p, config)
                    parts = loss_from_prefix(
                        _slice_prefix(prefix, idx), labels[idx], masks[idx], p, config, train_cfg, text
                    )
                    loss = float(parts.total.data)
                    if not np.isfinite(loss):
                        raise FloatingPointError(f"loss is {loss}")
                    grads = backward(parts.total, {name: p[name] for name in names})
                    opt.step(values, grads)
            except FloatingPointError as exc:
                raise NumericError(f"non-finite values at epoch {epoch}, step {step}: {exc}") from None
            for name in names:
                state.params[name] = values[name]
            tot += loss * len(idx)
            glob += parts.global_part * len(idx)
            loc += parts.local_part * len(idx)
        rec = EpochRecord(epoch, tot / n, glob / n, loc / n)
        records.append(rec)
        log.info("epoch %d loss %.6f", epoch, rec.mean_total)
        if progress is not None:
            progress(rec)
    return state, records
