"""Image- and pixel-level anomaly detection metrics (exact threshold sweeps)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

IMAGE_KEYS = ("auroc", "ap", "f1_max")
PIXEL_KEYS = ("auroc", "pro", "ap", "f1_max", "iou_max")


class MetricError(ValueError):
    pass


def _prep(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.shape != y.shape:
        raise MetricError(f"scores and labels differ in size: {s.size} vs {y.size}")
    return s, y


def _sweep(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative (TP, FP) at every distinct threshold, highest threshold first."""
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    return tp[last].astype(np.float64), fp[last].astype(np.float64)


def auroc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counted one half."""
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both positive and negative labels")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Sum over recall steps of (R_i - R_{i-1}) * P_i, tied scores entering together."""
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("average precision needs at least one positive")
    tp, fp = _sweep(s, y)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def f1_max(scores, labels) -> float:
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("F1-max needs at least one positive")
    tp, fp = _sweep(s, y)
    f1 = 2 * tp / (2 * tp + fp + (n_pos - tp))
    return float(f1.max())


def iou_max(anomaly_map, mask) -> float:
    """Best |pred & mask| / |pred | mask| over thresholds pred = map >= t."""
    s, y = _prep(anomaly_map, mask)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("IoU-max needs a nonempty mask")
    tp, fp = _sweep(s, y)
    return float((tp / (fp + n_pos)).max())


_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def label_regions(masks, connectivity: int = 4) -> tuple[np.ndarray, int]:
    """Dataset-wide region ids (0 = normal) for a stack of binary masks [n, H, W]."""
    masks = np.asarray(masks).astype(bool)
    labels = np.zeros(masks.shape, dtype=np.int64)
    total = 0
    for i, m in enumerate(masks):
        lab, count = ndimage.label(m, structure=_STRUCTURES[connectivity])
        labels[i] = np.where(lab > 0, lab + total, 0)
        total += count
    return labels, total


def pro_curve(maps, masks, connectivity: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, mean per-region overlap) at every distinct threshold, starting at (0, 0)."""
    maps = np.asarray(maps, dtype=np.float64)
    masks = np.asarray(masks)
    if maps.ndim == 2:
        maps, masks = maps[None], masks[None]
    if maps.shape != masks.shape:
        raise MetricError(f"maps {maps.shape} and masks {masks.shape} differ in shape")
    regions, n_regions = label_regions(masks, connectivity)
    if n_regions == 0:
        raise MetricError("PRO needs at least one anomalous region")
    flat_regions = regions.reshape(-1)
    normal = flat_regions == 0
    n_normal = int(normal.sum())
    if n_normal == 0:
        raise MetricError("PRO needs normal pixels to define a false-positive rate")
    sizes = np.bincount(flat_regions, minlength=n_regions + 1).astype(np.float64)
    weight = np.where(normal, 0.0, 1.0 / (n_regions * sizes[flat_regions]))
    s = maps.reshape(-1)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    overlap = np.cumsum(weight[order])
    fp = np.cumsum(normal[order])
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    fpr = np.r_[0.0, fp[last] / n_normal]
    pro = np.r_[0.0, np.minimum(overlap[last], 1.0)]
    return fpr, pro


def _area_until(x: np.ndarray, y: np.ndarray, limit: float) -> float:
    """Trapezoid area under a piecewise-linear curve on [0, limit]."""
    keep = x <= limit
    xs, ys = x[keep], y[keep]
    j = int(np.count_nonzero(keep))
    if j < x.size and xs[-1] < limit:
        x0, x1, y0, y1 = x[j - 1], x[j], y[j - 1], y[j]
        y_lim = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
        xs, ys = np.r_[xs, limit], np.r_[ys, y_lim]
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2.0))


def pro(maps, masks, fpr_limit: float = 0.3, connectivity: int = 4) -> float:
    """Area under the per-region-overlap vs FPR curve up to ``fpr_limit``, normalized."""
    fpr, overlap = pro_curve(maps, masks, connectivity)
    return _area_until(fpr, overlap, fpr_limit) / fpr_limit


# ---- reports ----------------------------------------------------------------


@dataclass
class MetricReport:
    image_level: dict
    pixel_level: dict
    images: int
    positive_images: int
    anomalous_pixels: int

    def flat(self) -> dict:
        out = {f"image.{k}": v for k, v in self.image_level.items()}
        out.update({f"pixel.{k}": v for k, v in self.pixel_level.items()})
        out.update(
            {
                "count.images": self.images,
                "count.positive_images": self.positive_images,
                "count.anomalous_pixels": self.anomalous_pixels,
            }
        )
        return out

    def to_text(self) -> str:
        lines = []
        for k, v in self.flat().items():
            lines.append(f"{k} = {v:.10f}" if isinstance(v, float) else f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "image_level": self.image_level,
                "pixel_level": self.pixel_level,
                "counts": {
                    "images": self.images,
                    "positive_images": self.positive_images,
                    "anomalous_pixels": self.anomalous_pixels,
                },
            },
            indent=2,
            sort_keys=True,
        ) + "\n"


def _with_mad(values: dict) -> dict:
    out = dict(values)
    out["mad"] = float(sum(values.values()) / len(values))
    return out


def image_metrics(scores, labels) -> dict:
    return _with_mad(
        {"auroc": auroc(scores, labels), "ap": average_precision(scores, labels), "f1_max": f1_max(scores, labels)}
    )


def pixel_metrics(maps, masks, pooled: bool = True, fpr_limit: float = 0.3, connectivity: int = 4) -> dict:
    """AUROC/AP/F1-max over pooled pixels (or averaged over anomalous images); PRO and IoU-max over all maps."""
    maps = np.asarray(maps, dtype=np.float64)
    masks = np.asarray(masks) > 0
    if pooled:
        flat_s, flat_y = maps.reshape(-1), masks.reshape(-1)
        core = {"auroc": auroc(flat_s, flat_y), "ap": average_precision(flat_s, flat_y), "f1_max": f1_max(flat_s, flat_y)}
    else:
        per = [(m, g) for m, g in zip(maps, masks) if g.any() and not g.all()]
        if not per:
            raise MetricError("no image has both normal and anomalous pixels")
        core = {
            "auroc": float(np.mean([auroc(m, g) for m, g in per])),
            "ap": float(np.mean([average_precision(m, g) for m, g in per])),
            "f1_max": float(np.mean([f1_max(m, g) for m, g in per])),
        }
    values = {
        "auroc": core["auroc"],
        "pro": pro(maps, masks, fpr_limit, connectivity),
        "ap": core["ap"],
        "f1_max": core["f1_max"],
        "iou_max": iou_max(maps, masks),
    }
    return _with_mad(values)


def compute_report(image_scores, image_labels, maps, masks, pooled: bool = True) -> MetricReport:
    image_labels = np.asarray(image_labels).astype(int)
    masks = np.asarray(masks)
    if image_labels.min(initial=1) == image_labels.max(initial=0) or len(image_labels) == 0:
        raise MetricError("evaluation needs both normal and abnormal images")
    return MetricReport(
        image_metrics(image_scores, image_labels),
        pixel_metrics(maps, masks, pooled=pooled),
        int(len(image_labels)),
        int(image_labels.sum()),
        int((masks > 0).sum()),
    )


def evaluate(samples, state, r: float | None = None, k: float | None = None, pooled: bool = True, scorer=None):
    """Score every sample and compute the full report.

    ``scorer(images) -> (maps, joint_scores)`` overrides the model (used for oracle checks).
    Returns (report, maps, joint scores).
    """
    from .scoring import score_batch

    samples = list(samples)
    if not samples:
        raise MetricError("empty evaluation dataset")
    images = np.stack([s.image for s in samples])
    if scorer is None:
        maps, breakdowns = score_batch(images, state, r=r, k=k)
        joint = np.array([b.s_joint for b in breakdowns])
    else:
        maps, joint = scorer(samples)
    report = compute_report(joint, [s.label for s in samples], maps, np.stack([s.mask for s in samples]), pooled)
    return report, maps, joint
