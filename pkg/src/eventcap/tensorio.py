"""Binary tensor file I/O (the "ACT1" format).

Layout: magic bytes ``ACT1``, u8 version (=1), u32 little-endian rank,
``rank`` u32 little-endian dims, then the row-major float32 little-endian
payload. Used for per-clip feature files, persisted embedding tables, and
checkpoint tensor sections.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"ACT1"
VERSION = 1


class TensorFormatError(ValueError):
    """Raised when a tensor file or stream violates the ACT1 layout."""


def write_tensor(stream: BinaryIO, array: np.ndarray) -> None:
    """Write one array to an open binary stream in ACT1 layout."""
    # np.ascontiguousarray would promote rank-0 arrays to rank 1
    arr = np.array(array, dtype="<f4", order="C", copy=True)
    stream.write(MAGIC)
    stream.write(struct.pack("<B", VERSION))
    stream.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        stream.write(struct.pack("<I", dim))
    stream.write(arr.tobytes())


def read_tensor(stream: BinaryIO) -> np.ndarray:
    """Read one ACT1 tensor from an open binary stream as float32."""
    magic = stream.read(4)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic bytes {magic!r}, expected {MAGIC!r}")
    version_raw = stream.read(1)
    if len(version_raw) != 1:
        raise TensorFormatError("truncated header: missing version byte")
    version = version_raw[0]
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    rank_raw = stream.read(4)
    if len(rank_raw) != 4:
        raise TensorFormatError("truncated header: missing rank")
    rank = struct.unpack("<I", rank_raw)[0]
    dims = []
    for _ in range(rank):
        dim_raw = stream.read(4)
        if len(dim_raw) != 4:
            raise TensorFormatError("truncated header: missing dimension")
        dims.append(struct.unpack("<I", dim_raw)[0])
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload = stream.read(4 * count)
    if len(payload) != 4 * count:
        raise TensorFormatError(
            f"truncated payload: expected {4 * count} bytes, got {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f4", count=count)
    return flat.reshape(dims).copy()


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    """Save a single array to ``path`` in ACT1 format (float32)."""
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path: str | Path) -> np.ndarray:
    """Load a single ACT1 array from ``path``, rejecting trailing garbage."""
    with open(path, "rb") as fh:
        arr = read_tensor(fh)
        trailing = fh.read(1)
    if trailing:
        raise TensorFormatError(f"{path}: trailing bytes after tensor payload")
    return arr
