"""Binary tensor checkpoints.

Layout (all integers little-endian)::

    b"VQNN"  u16 version  u32 tensor_count
    per tensor: u16 name_len, name (utf-8), u8 rank, rank x u32 dims,
                prod(dims) x f64 values (little-endian, row-major)

Reading is strict: bad magic, unknown version, short reads and trailing
bytes all raise :class:`CheckpointError`.
"""
from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"VQNN"
VERSION = 1


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a VQNN checkpoint (bad magic)")
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("tensor name is not utf-8") from exc
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(data)
