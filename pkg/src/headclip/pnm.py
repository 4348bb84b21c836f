"""Binary PGM/PPM (P5/P6) reading and writing, 8- or 16-bit."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PNMError(ValueError):
    pass


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, i = [], 0
    n = len(data)
    while len(out) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise PNMError("truncated header")
        out.append(data[start:i])
    # exactly one whitespace byte separates the header from the raster
    return out, i + 1


def decode(data: bytes) -> tuple[np.ndarray, int]:
    """Parse P5/P6 bytes into (integer array [H, W] or [H, W, 3], maxval)."""
    tokens, offset = _tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PNMError("malformed header") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise PNMError(f"bad dimensions or maxval: {width}x{height}, {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    raster = data[offset : offset + count * dtype.itemsize]
    if len(raster) != count * dtype.itemsize:
        raise PNMError("truncated raster")
    arr = np.frombuffer(raster, dtype=dtype).astype(np.int64)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return arr.reshape(shape), maxval


def encode(values: np.ndarray, maxval: int) -> bytes:
    """Serialize integer samples [H, W] (P5) or [H, W, 3] (P6)."""
    values = np.asarray(values)
    if values.ndim == 2:
        magic = b"P5"
    elif values.ndim == 3 and values.shape[2] == 3:
        magic = b"P6"
    else:
        raise PNMError(f"cannot encode array of shape {values.shape}")
    if values.min(initial=0) < 0 or values.max(initial=0) > maxval:
        raise PNMError("sample outside [0, maxval]")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = values.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    return header + values.astype(dtype).tobytes()


def read_image(path) -> np.ndarray:
    """Load a P5/P6 file as float64 in [0, 1]; grayscale is returned as [H, W]."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise PNMError(f"cannot read {path}: {exc}") from None
    try:
        values, maxval = decode(data)
    except PNMError as exc:
        raise PNMError(f"{path}: {exc}") from None
    return values.astype(np.float64) / maxval


def write_image(path, image: np.ndarray, maxval: int = 255) -> None:
    """Write a [0, 1] float image as P5 ([H, W]) or P6 ([H, W, 3])."""
    q = np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * maxval).astype(np.int64)
    Path(path).write_bytes(encode(q, maxval))
