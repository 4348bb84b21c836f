"""Learned head-weight readout and a simplified per-head text-affinity probe.

This is not the full caption-bank span decomposition; each head is summarized by
one direction (its mean CSA output pushed through the shared output projection)
and compared to probe text embeddings by cosine similarity.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .text import encode_sequence
from .vision import HEAD_WEIGHTS, csa_heads, frozen_prefix, local_block

AMPLIFY_THRESHOLD = 1.0


@dataclass
class HeadReportRow:
    layer: int
    head: int
    weight: float
    amplified: bool
    affinities: list[float] = field(default_factory=list)


def head_weight_matrix(state) -> np.ndarray:
    """Raw learned weights [num_csa_layers, num_heads]; a copy, never a view."""
    return np.array(state.params[HEAD_WEIGHTS], dtype=np.float64, copy=True)


def head_directions(state, images) -> np.ndarray:
    """Per-head summary vectors [num_csa_layers, num_heads, D] in the joint space."""
    config = state.config
    p = state.tensors(track=False)
    csa = config.csa_layers
    if not csa:
        return np.zeros((0, config.num_heads, config.embed_dim))
    x = frozen_prefix(images, p, config).entry_tokens
    weights = p[HEAD_WEIGHTS]
    dk = config.head_dim
    out = np.zeros((len(csa), config.num_heads, config.embed_dim))
    for i, layer in enumerate(csa):
        name = f"vision.layer{layer}"
        heads = csa_heads(x, p, name, config.num_heads).data  # [B, h, T, dk]
        mean = heads.mean(axis=(0, 2))  # [h, dk]
        wo = p[f"{name}.attn.wo"].data
        for h in range(config.num_heads):
            out[i, h] = mean[h] @ wo[h * dk : (h + 1) * dk] @ p["vision.proj"].data
        x = local_block(x, p, name, weights[i], config.num_heads)
    return out


def affinity_matrix(directions: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Cosine between every head direction [L, h, D] and probe embedding [P, D] -> [L, h, P]."""
    directions = np.asarray(directions, dtype=np.float64)
    probes = np.asarray(probes, dtype=np.float64)
    dn = np.linalg.norm(directions, axis=-1, keepdims=True)
    pn = np.linalg.norm(probes, axis=-1, keepdims=True)
    d_hat = np.divide(directions, dn, out=np.zeros_like(directions), where=dn > 0)
    p_hat = np.divide(probes, pn, out=np.zeros_like(probes), where=pn > 0)
    return np.clip(d_hat @ p_hat.T, -1.0, 1.0)


def probe_embeddings(state, probes) -> np.ndarray:
    p = state.tensors(track=False)
    return np.stack([encode_sequence(ids, p, state.config).data for ids in probes])


def head_text_affinity(state, probes, images) -> np.ndarray:
    """Mean cosine affinity of each CSA head to each probe prompt: [layers, heads, probes]."""
    probes = [list(q) for q in probes]
    if not probes:
        raise ValueError("at least one probe prompt is required")
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if len(images) == 0:
        raise ValueError("at least one image is required")
    return affinity_matrix(head_directions(state, images), probe_embeddings(state, probes))


def head_report(state, probes=None, images=None) -> list[HeadReportRow]:
    weights = head_weight_matrix(state)
    aff = head_text_affinity(state, probes, images) if probes else None
    lo = state.config.csa_layers
    rows = []
    for i, layer in enumerate(lo):
        for h in range(weights.shape[1]):
            w = float(weights[i, h])
            rows.append(
                HeadReportRow(layer, h, w, w > AMPLIFY_THRESHOLD, [] if aff is None else [float(a) for a in aff[i, h]])
            )
    return rows


def report_csv(rows: list[HeadReportRow], n_probes: int = 0) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "head", "weight", "amplified"] + [f"probe{j}" for j in range(n_probes)])
    for r in rows:
        writer.writerow(
            [r.layer, r.head, f"{r.weight:.10f}", int(r.amplified)] + [f"{a:.10f}" for a in r.affinities]
        )
    return buf.getvalue()


def parse_probes(text: str, vocab_size: int) -> list[list[int]]:
    """One probe per non-empty line: whitespace- or comma-separated token ids."""
    probes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            ids = [int(tok) for tok in line.replace(",", " ").split()]
        except ValueError:
            raise ValueError(f"probe line {lineno}: token ids must be integers") from None
        bad = [i for i in ids if not 0 <= i < vocab_size]
        if bad:
            raise ValueError(f"probe line {lineno}: token id {bad[0]} out of range")
        probes.append(ids)
    if not probes:
        raise ValueError("probe file contains no probes")
    return probes
