"""Matplotlib figures written next to the text/CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no Software/date metadata, so reruns give identical PNG bytes
    fig.savefig(path, format="png", bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def head_weight_heatmap(weights: np.ndarray, layers, path) -> Path:
    """Learned weight per (CSA layer, head); diverging colors centered at 1."""
    weights = np.asarray(weights, dtype=np.float64)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(1.2 + 0.5 * weights.shape[1], 1.0 + 0.45 * max(1, weights.shape[0])))
        span = max(float(np.abs(weights - 1.0).max(initial=0.0)), 1e-3)
        im = ax.imshow(weights, cmap="RdBu_r", vmin=1.0 - span, vmax=1.0 + span, aspect="auto")
        ax.set_xticks(range(weights.shape[1]))
        ax.set_yticks(range(weights.shape[0]))
        ax.set_yticklabels([str(l) for l in layers])
        ax.set_xlabel("head")
        ax.set_ylabel("CSA layer")
        for (i, j), w in np.ndenumerate(weights):
            ax.text(j, i, f"{w:.2f}", ha="center", va="center", fontsize=7)
        fig.colorbar(im, ax=ax, fraction=0.05)
        return _save(fig, path)


def anomaly_map_panel(images, masks, maps, path, max_rows: int = 6) -> Path:
    """Rows of (image, ground truth, anomaly map) for the first ``max_rows`` samples."""
    n = min(len(images), max_rows)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(n, 3, figsize=(4.5, 1.5 * n), squeeze=False)
        for i in range(n):
            axes[i, 0].imshow(np.clip(images[i], 0, 1))
            axes[i, 1].imshow(masks[i], cmap="gray", vmin=0, vmax=1)
            axes[i, 2].imshow(maps[i], cmap="jet", vmin=0, vmax=1)
            for ax in axes[i]:
                ax.set_axis_off()
        for ax, title in zip(axes[0], ("image", "mask", "anomaly map")):
            ax.set_title(title)
        return _save(fig, path)


def ablation_plot(axis: str, arms, image_mad, pixel_mad, path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        x = np.arange(len(arms))
        numeric = all(_is_number(a) for a in arms)
        if numeric:
            xs = [float(a) for a in arms]
            ax.plot(xs, image_mad, "o-", label="image mAD")
            ax.plot(xs, pixel_mad, "s--", label="pixel mAD")
        else:
            ax.bar(x - 0.2, image_mad, 0.4, label="image mAD")
            ax.bar(x + 0.2, pixel_mad, 0.4, label="pixel mAD")
            ax.set_xticks(x)
            ax.set_xticklabels([str(a) for a in arms])
        ax.set_xlabel(axis)
        ax.set_ylabel("mAD")
        ax.set_ylim(0, 1)
        ax.legend(frameon=False)
        return _save(fig, path)


def loss_curve(records, path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        epochs = [r.epoch for r in records]
        ax.plot(epochs, [r.mean_total for r in records], label="total")
        ax.plot(epochs, [r.mean_global for r in records], label="global")
        ax.plot(epochs, [r.mean_local for r in records], label="local (sum over layers)")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def _is_number(v) -> bool:
    try:
        float(v)
    except (TypeError, ValueError):
        return False
    return True
