"""Dataset ingestion, checkpoint persistence and anomaly-map export in one place."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from . import pnm
from .checkpoint import (  # noqa: F401
    BadMagicError,
    CheckpointError,
    ChecksumMismatchError,
    ConfigMismatchError,
    TruncatedCheckpointError,
    UnknownDtypeError,
    load_checkpoint,
    save_checkpoint,
)
from .datasets import (  # noqa: F401
    DataError,
    DatasetSpec,
    LabeledSample,
    SynthSpec,
    generate_synthetic,
    load_dataset,
    parse_synth,
    resolve_data,
    write_dataset,
)

MAP_MAXVAL = 65535


def map_to_pgm(anomaly_map) -> bytes:
    """16-bit P5 bytes with value round(score * 65535), big-endian, row-major."""
    m = np.asarray(anomaly_map, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"anomaly map must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)) or m.min() < 0.0 or m.max() > 1.0:
        raise ValueError("anomaly map values must be finite and lie in [0, 1]")
    return pnm.encode(np.rint(m * MAP_MAXVAL).astype(np.int64), MAP_MAXVAL)


def export_map(anomaly_map, path) -> Path:
    path = Path(path)
    data = map_to_pgm(anomaly_map)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def read_map(path) -> np.ndarray:
    return pnm.read_image(path)
