"""Minimal binary checkpoint format for named float64 arrays.

Layout (all integers little-endian)::

    magic    8 bytes  b"ANFRCKPT"
    version  u32
    count    u32
    count records of:
        name_len u32, name (utf-8), ndim u32, dims u64 * ndim, payload f64 * prod(dims)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"ANFRCKPT"
VERSION = 1


def encode_checkpoint(params: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.array(value, dtype="<f8", order="C")  # keeps 0-d shapes, unlike ascontiguousarray
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: expected {n} bytes of {what} at offset {self.pos}, "
                                  f"only {len(self.data) - self.pos} remain")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic header)")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = r.unpack("<I", f"record {i} name length")
        try:
            name = r.take(name_len, f"record {i} name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"record {i}: name is not valid utf-8") from None
        (ndim,) = r.unpack("<I", f"record {i} rank")
        if ndim > 8:
            raise CheckpointError(f"record {i} ('{name}'): implausible rank {ndim}")
        dims = r.unpack(f"<{ndim}Q", f"record {i} shape")
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = r.take(8 * n, f"record {i} ('{name}') payload")
        if name in out:
            raise CheckpointError(f"duplicate record name '{name}'")
        out[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after the last record")
    return out


def save_checkpoint(params: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


def describe_checkpoint(params: dict[str, np.ndarray]) -> str:
    lines = [f"{len(params)} arrays, {sum(v.size for v in params.values())} values"]
    width = max((len(n) for n in params), default=0)
    for name, v in params.items():
        norm = float(np.sqrt((v * v).sum()))
        lines.append(f"  {name:<{width}}  {str(tuple(v.shape)):<16}  l2={norm:.6g}")
    return "\n".join(lines)
