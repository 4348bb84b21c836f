"""Cross-family zero-shot protocol and ablation arms shared by the CLI and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

from .config import ModelConfig, TrainConfig
from .datasets import SynthSpec, generate_synthetic
from .metrics import MetricReport, evaluate
from .model import HeadCLIPState
from .training import train

AXES = ("lhw", "jas_ratio", "topk", "init")
JAS_ARMS = tuple(round(0.1 * i, 1) for i in range(11))
TOPK_ARMS = (0.01, 0.05, 0.1)
INIT_ARMS = ("gaussian", "0.0", "0.5", "1.0")
LHW_ARMS = ("on", "off")


def aux_spec(seed: int, resolution: int = 32) -> SynthSpec:
    """Auxiliary training set: 200 'bars' samples, half defective."""
    return SynthSpec(seed=1000 + seed, n_normal=100, n_abnormal=100, category_style="bars", resolution=resolution)


def target_spec(seed: int, resolution: int = 32) -> SynthSpec:
    """Unseen evaluation family: 100 'blobs' samples, half defective."""
    return SynthSpec(seed=2000 + seed, n_normal=50, n_abnormal=50, category_style="blobs", resolution=resolution)


@dataclass
class RunResult:
    seed: int
    state: HeadCLIPState
    report: MetricReport
    records: list


def run_zero_shot(seed: int, model_cfg: ModelConfig | None = None, train_cfg: TrainConfig | None = None,
                  aux=None, target=None) -> RunResult:
    """Seeded backbone and shuffle, train on ``aux``, evaluate on ``target`` (defaults: bars -> blobs)."""
    model_cfg = (model_cfg or ModelConfig()).replace(init_seed=seed)
    train_cfg = (train_cfg or TrainConfig()).replace(seed=seed)
    aux = generate_synthetic(aux_spec(seed, model_cfg.image_size)) if aux is None else aux
    target = generate_synthetic(target_spec(seed, model_cfg.image_size)) if target is None else target
    state, records = train(aux, HeadCLIPState.initialize(model_cfg), train_cfg)
    report, _, _ = evaluate(target, state)
    return RunResult(seed, state, report, records)


def ablation_rows(axis: str, seed: int, model_cfg: ModelConfig, train_cfg: TrainConfig, aux, target):
    """Yield ``(arm, MetricReport)`` for every arm of ``axis``; all arms share the seed."""
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {AXES}")
    model_cfg = model_cfg.replace(init_seed=seed)
    train_cfg = train_cfg.replace(seed=seed)
    if axis == "lhw":
        for arm in LHW_ARMS:
            state, _ = train(aux, HeadCLIPState.initialize(model_cfg), train_cfg.replace(learn_head_weights=arm == "on"))
            yield arm, evaluate(target, state)[0]
    elif axis == "init":
        for arm in INIT_ARMS:
            state, _ = train(aux, HeadCLIPState.initialize(model_cfg.replace(head_init=arm)), train_cfg)
            yield arm, evaluate(target, state)[0]
    else:
        # r and k only change inference, so one trained state serves every arm
        state, _ = train(aux, HeadCLIPState.initialize(model_cfg), train_cfg)
        for arm in JAS_ARMS if axis == "jas_ratio" else TOPK_ARMS:
            kw = {"r": arm} if axis == "jas_ratio" else {"k": arm}
            yield arm, evaluate(target, state, **kw)[0]
