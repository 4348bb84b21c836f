"""Checkpoint persistence.

Layout::

    8 bytes   magic  b"HCLIPCK1"
    8 bytes   header length, unsigned little-endian
    N bytes   UTF-8 JSON header (config, tensor table, payload checksum)
    ...       raw little-endian float64 payloads, in header order
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import ModelConfig, model_config_from_dict, model_config_to_dict
from .diffcore import ParamSet
from .model import HeadCLIPState

MAGIC = b"HCLIPCK1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class UnknownDtypeError(CheckpointError):
    pass


class ChecksumMismatchError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    def __init__(self, field: str, stored, requested):
        self.field = field
        super().__init__(f"config field {field!r} differs: checkpoint has {stored!r}, requested {requested!r}")


def encode_checkpoint(state: HeadCLIPState) -> bytes:
    table = {}
    chunks = []
    offset = 0
    for name, arr in state.params.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table[name] = {
            "dtype": "f64",
            "shape": list(arr.shape),
            "offset": offset,
            "length": len(raw),
            "trainable": state.params.is_trainable(name),
        }
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format": FORMAT_VERSION,
        "config": model_config_to_dict(state.config),
        "tensors": table,
        "checksum": {"algorithm": "sha256", "payload": hashlib.sha256(payload).hexdigest()},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + payload


def save_checkpoint(state: HeadCLIPState, path) -> None:
    """Write atomically (temporary file, then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(state))
    os.replace(tmp, path)


def decode_checkpoint(data: bytes, expected: ModelConfig | None = None, verify: bool = True) -> HeadCLIPState:
    if len(data) < 16:
        raise TruncatedCheckpointError("file too short for a checkpoint preamble")
    if data[:8] != MAGIC:
        raise BadMagicError(f"bad magic {data[:8]!r}")
    (head_len,) = struct.unpack("<Q", data[8:16])
    if 16 + head_len > len(data):
        raise TruncatedCheckpointError("header extends past end of file")
    try:
        header = json.loads(data[16 : 16 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    payload = data[16 + head_len :]
    config = model_config_from_dict(header["config"])
    if expected is not None:
        for f in fields(ModelConfig):
            a, b = getattr(config, f.name), getattr(expected, f.name)
            if a != b:
                raise ConfigMismatchError(f.name, a, b)
    params = ParamSet()
    for name, entry in header["tensors"].items():
        if entry.get("dtype") != "f64":
            raise UnknownDtypeError(f"{name}: unknown dtype {entry.get('dtype')!r}")
        start, length = int(entry["offset"]), int(entry["length"])
        if start + length > len(payload):
            raise TruncatedCheckpointError(f"payload for {name} is truncated")
        shape = tuple(entry["shape"])
        if length != 8 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{name}: byte length {length} does not match shape {shape}")
        arr = np.frombuffer(payload, dtype="<f8", count=length // 8, offset=start).reshape(shape)
        params.add(name, arr.astype(np.float64), trainable=bool(entry.get("trainable", False)))
    if verify:
        digest = hashlib.sha256(payload).hexdigest()
        if digest != header["checksum"]["payload"]:
            raise ChecksumMismatchError("payload checksum mismatch: checkpoint is corrupted")
    return HeadCLIPState(config, params)


def load_checkpoint(path, expected: ModelConfig | None = None, verify: bool = True) -> HeadCLIPState:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode_checkpoint(data, expected, verify)
