"""Binary checkpoint format.

Layout (little-endian)::

    8 bytes   magic b"GMSSCKPT"
    u32       format version (1)
    u32       parameter count
    per parameter:
        u32 name length, name bytes (UTF-8), u32 rows, u32 cols,
        rows*cols float64 values, row-major
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"GMSSCKPT"
VERSION = 1


def encode(params: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim != 2:
            raise ValueError(f"{name}: checkpoint blobs are 2-D, got shape {arr.shape}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw + struct.pack("<II", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    """Parse a checkpoint; any defect raises FormatError and nothing is returned."""
    if buf[:8] != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated checkpoint: need {n} bytes", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    params = {}
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<I", take(4))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("parameter name is not UTF-8", start + 4) from None
        rows, cols = struct.unpack("<II", take(8))
        data = np.frombuffer(take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(np.float64)
        if name in params:
            raise FormatError(f"duplicate parameter {name}", start)
        if not np.all(np.isfinite(data)):
            raise FormatError(f"non-finite values in {name}", start)
        params[name] = data
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", pos)
    return params


def save(params: dict[str, np.ndarray], path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(params))
    os.replace(tmp, path)


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
