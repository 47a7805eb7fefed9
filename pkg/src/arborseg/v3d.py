"""Tiny binary container for volumes.

Layout: magic b"V3D1", one u8 dtype code (0 = float32, 1 = uint8), u32 ndim,
ndim u64 extents, then the raw row-major little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"V3D1"
_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_RCODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}


def write_v3d(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    dtype = np.dtype("<f4") if arr.dtype.kind == "f" else np.dtype("u1")
    arr = np.ascontiguousarray(arr.astype(dtype, copy=False))
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<B", _RCODES[dtype]))
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def read_v3d(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a V3D1 file (magic {raw[:4]!r})")
    code = raw[4]
    if code not in _CODES:
        raise ValueError(f"{path}: unknown dtype code {code}")
    ndim = struct.unpack_from("<I", raw, 5)[0]
    shape = struct.unpack_from(f"<{ndim}Q", raw, 9)
    offset = 9 + 8 * ndim
    dtype = _CODES[code]
    n = int(np.prod(shape))
    arr = np.frombuffer(raw, dtype, count=n, offset=offset).reshape(shape)
    return arr.copy()
