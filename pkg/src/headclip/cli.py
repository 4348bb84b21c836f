"""Command-line entry point: train, eval, score, ablate, heads."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import pnm
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig, TrainConfig, format_config, load_config
from .data_io import export_map
from .datasets import DataError, resolve_data
from .experiments import AXES, ablation_rows
from .head_analysis import head_report, parse_probes, report_csv
from .metrics import MetricError, evaluate
from .model import HeadCLIPState
from .scoring import score_image
from .training import NumericError, train

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

DEFAULT_AUX = "synth:seed=1000,n=200,style=bars"
DEFAULT_TARGET = "synth:seed=2000,n=100,style=blobs"
DEFAULT_PROBE_IMAGES = "synth:seed=0,n=8,style=blobs"

log = logging.getLogger("headclip")


def _write_atomic(path, data) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data.encode("utf-8") if isinstance(data, str) else data)
    os.replace(tmp, path)
    return path


def _write_manifest(out: Path, command: str, args, model_cfg, train_cfg, seed, inputs, outputs, started: float):
    """Run record next to the primary output; the only file that carries wall-clock time."""
    lines = [
        f"command = {command}",
        f"argv = {' '.join(sys.argv[1:])}",
        f"seed = {seed}",
        "inputs = " + ",".join(str(p) for p in inputs),
        "outputs = " + ",".join(str(p) for p in outputs),
        f"duration_seconds = {time.perf_counter() - started:.3f}",
    ]
    body = "\n".join(lines) + "\n" + format_config(model_cfg, train_cfg)
    _write_atomic(Path(str(out) + ".manifest"), body)


def _configs(path, seed) -> tuple[ModelConfig, TrainConfig]:
    model_cfg, train_cfg = load_config(path) if path else (ModelConfig(), TrainConfig())
    if seed is not None:
        model_cfg = model_cfg.replace(init_seed=seed)
        train_cfg = train_cfg.replace(seed=seed)
    return model_cfg, train_cfg


def _load_image(path, size: int) -> np.ndarray:
    try:
        img = pnm.read_image(path)
    except pnm.PNMError as exc:
        raise DataError(str(exc)) from None
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.shape[:2] != (size, size):
        raise DataError(f"{path}: expected {size}x{size}, got {img.shape[1]}x{img.shape[0]}")
    return img


# ---- commands ---------------------------------------------------------------


def cmd_train(args) -> int:
    started = time.perf_counter()
    model_cfg, train_cfg = _configs(args.config, args.seed)
    samples = resolve_data(args.aux, model_cfg.image_size, split="train")
    state = HeadCLIPState.initialize(model_cfg)

    state, records = train(samples, state, train_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state, out)
    loss_log = Path(str(out) + ".losses.tsv")
    _write_atomic(loss_log, "epoch\ttotal\tglobal\tlocal\n" + "".join(r.line() + "\n" for r in records))
    outputs = [out, loss_log]
    if args.figure:
        from .plotting import loss_curve

        outputs.append(loss_curve(records, args.figure))
    _write_manifest(out, "train", args, model_cfg, train_cfg, train_cfg.seed, [args.aux], outputs, started)
    # stdout stays empty on failure, so the log is printed only once everything is written
    sys.stdout.write("".join(r.line() + "\n" for r in records))
    return 0


def _identity_scorer(samples):
    # maps equal the masks and scores equal the labels: every metric is perfect
    maps = np.stack([s.mask for s in samples]).astype(np.float64)
    return maps, np.array([float(s.label) for s in samples])


def cmd_eval(args) -> int:
    started = time.perf_counter()
    state = load_checkpoint(args.model)
    samples = resolve_data(args.data, state.config.image_size, split="test")
    scorer = _identity_scorer if args.oracle_identity_scorer else None
    report, maps, _ = evaluate(samples, state, r=args.r, k=args.topk, pooled=not args.per_image, scorer=scorer)
    text = report.to_text()
    out = Path(args.report)
    _write_atomic(out, text)
    json_path = _write_atomic(Path(str(out) + ".json"), report.to_json())
    outputs = [out, json_path]
    if args.figure:
        from .plotting import anomaly_map_panel

        outputs.append(anomaly_map_panel([s.image for s in samples], [s.mask for s in samples], maps, args.figure))
    _write_manifest(out, "eval", args, state.config, None, None, [args.model, args.data], outputs, started)
    sys.stdout.write(text)
    return 0


def cmd_score(args) -> int:
    state = load_checkpoint(args.model)
    image = _load_image(args.image, state.config.image_size)
    for name, value in (("--r", args.r), ("--topk", args.topk)):
        if value is not None and not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {value}")
    if args.topk is not None and args.topk == 0.0:
        raise ConfigError("--topk must be positive")
    amap, b = score_image(image, state, r=args.r, k=args.topk)
    export_map(amap, args.map_out)
    print(f"S_g = {b.s_global:.6f}")
    print(f"S_l_topk = {b.s_local_topk:.6f}")
    print(f"S_j = {b.s_joint:.6f}")
    return 0


ABLATION_COLUMNS = (
    "image.auroc", "image.ap", "image.f1_max", "image.mad",
    "pixel.auroc", "pixel.pro", "pixel.ap", "pixel.f1_max", "pixel.iou_max", "pixel.mad",
)


def cmd_ablate(args) -> int:
    started = time.perf_counter()
    model_cfg, train_cfg = _configs(args.model_config, None)
    seed = train_cfg.seed if args.seed is None else args.seed
    res = model_cfg.image_size
    aux = resolve_data(args.aux, res, split="train")
    target = resolve_data(args.data, res, split="test")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("axis", "arm") + ABLATION_COLUMNS)
    arms, img_mad, pix_mad = [], [], []
    for arm, report in ablation_rows(args.axis, seed, model_cfg, train_cfg, aux, target):
        flat = report.flat()
        writer.writerow([args.axis, arm] + [f"{flat[c]:.10f}" for c in ABLATION_COLUMNS])
        arms.append(arm)
        img_mad.append(flat["image.mad"])
        pix_mad.append(flat["pixel.mad"])
        log.info("%s=%s image.mad=%.6f pixel.mad=%.6f", args.axis, arm, flat["image.mad"], flat["pixel.mad"])
    out = _write_atomic(args.out, buf.getvalue())
    outputs = [out]
    if args.figure:
        from .plotting import ablation_plot

        outputs.append(ablation_plot(args.axis, arms, img_mad, pix_mad, args.figure))
    _write_manifest(out, "ablate", args, model_cfg.replace(init_seed=seed), train_cfg.replace(seed=seed), seed,
                    [args.aux, args.data], outputs, started)
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_heads(args) -> int:
    state = load_checkpoint(args.model)
    probes = None
    images = None
    if args.probes:
        try:
            text = Path(args.probes).read_text(encoding="utf-8")
            probes = parse_probes(text, state.config.vocab_size)
        except (OSError, UnicodeDecodeError, ValueError) as exc:
            raise DataError(f"bad probe file {args.probes}: {exc}") from None
        images = np.stack([s.image for s in resolve_data(args.data, state.config.image_size)])
    rows = head_report(state, probes, images)
    text = report_csv(rows, len(probes) if probes else 0)
    _write_atomic(args.out, text)
    if args.figure:
        from .head_analysis import head_weight_matrix
        from .plotting import head_weight_heatmap

        head_weight_heatmap(head_weight_matrix(state), state.config.csa_layers, args.figure)
    sys.stdout.write(text)
    return 0


# ---- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="headclip", description="Zero-shot anomaly detection with learnable head weights.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train head weights and prompts on an auxiliary dataset")
    p.add_argument("--aux", default=DEFAULT_AUX, help="dataset root or synth:... spec")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, help="overrides init_seed and the training seed")
    p.add_argument("--figure", help="write a loss-curve PNG here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="image- and pixel-level metric report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=DEFAULT_TARGET, help="dataset root or synth:... spec")
    p.add_argument("--report", required=True, help="text report path; JSON goes to <report>.json")
    p.add_argument("--r", type=float, help="joint score ratio (default from the checkpoint config)")
    p.add_argument("--topk", type=float, help="top-k ratio (default from the checkpoint config)")
    p.add_argument("--per-image", action="store_true", help="average pixel AUROC/AP/F1 over anomalous images")
    p.add_argument("--figure", help="write an image/mask/map panel PNG here")
    p.add_argument("--oracle-identity-scorer", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score one image and write its anomaly map")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, help="P5/P6 image")
    p.add_argument("--map-out", required=True, help="16-bit P5 output map")
    p.add_argument("--r", type=float)
    p.add_argument("--topk", type=float)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ablate", help="sweep one design axis under identical seeds")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--model-config", help="key = value config file")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--aux", default=DEFAULT_AUX)
    p.add_argument("--data", default=DEFAULT_TARGET)
    p.add_argument("--seed", type=int)
    p.add_argument("--figure", help="write a sweep PNG here")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("heads", help="learned head weights, optionally with probe affinities")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--probes", help="one token-id sequence per line")
    p.add_argument("--data", default=DEFAULT_PROBE_IMAGES, help="images for probe affinities")
    p.add_argument("--figure", help="write a head-weight heatmap PNG here")
    p.set_defaults(func=cmd_heads)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MetricError, CheckpointError, pnm.PNMError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
