"""TR3D checkpoint container.

Layout: magic b"TR3D", u32 version, u64 header length, UTF-8 JSON header,
then concatenated raw little-endian float32 tensor payloads. The header holds
arbitrary metadata plus an index mapping tensor name -> {shape, offset}
(offset in bytes from the start of the payload section). Header keys are
sorted so identical state serializes to identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"TR3D"
_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    index = {}
    payloads = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], np.float32))
        index[name] = {"shape": list(arr.shape), "offset": offset}
        raw = arr.astype("<f4", copy=False).tobytes()
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": index},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in payloads:
            f.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a TR3D checkpoint (magic {raw[:4]!r})")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    hlen = struct.unpack_from("<Q", raw, 8)[0]
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    base = 16 + hlen
    tensors = {}
    for name, entry in header["tensors"].items():
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, "<f4", count=n, offset=base + entry["offset"])
        tensors[name] = arr.reshape(shape).copy()
    return tensors, header["meta"]


def model_state(model) -> dict[str, np.ndarray]:
    """All parameters and buffers of a model, by checkpoint name."""
    state = {n: p.data for n, p in model.named_parameters().items()}
    state.update(model.named_buffers())
    return state


def load_model_state(model, tensors: dict[str, np.ndarray]) -> None:
    """Copy checkpoint tensors into a model, validating names and shapes."""
    params = model.named_parameters()
    buffers = model.named_buffers()
    expected = set(params) | set(buffers)
    have = set(tensors)
    if expected - have:
        missing = sorted(expected - have)[0]
        raise ValueError(f"checkpoint missing tensor {missing!r} "
                         f"({len(expected - have)} missing in total)")
    for name in expected:
        src = tensors[name]
        dst = params[name].data if name in params else buffers[name]
        if tuple(src.shape) != tuple(dst.shape):
            raise ValueError(f"shape mismatch for {name!r}: checkpoint "
                             f"{tuple(src.shape)} vs model {tuple(dst.shape)}")
        dst[...] = src
