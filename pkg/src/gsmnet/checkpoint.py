"""Binary checkpoint files.

Layout (all integers unsigned 32-bit little-endian, elements IEEE-754
float32 little-endian, row-major)::

    b"GSMCKPT1"
    entry count
    per entry, in ascending name order:
        name length, UTF-8 name bytes, rank, extents..., elements...
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GSMCKPT1"
_U32 = struct.Struct("<I")
MAX_RANK = 8


class CheckpointFormatError(ValueError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U32.pack(len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4", order="C")
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(n) for n in arr.shape)
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(0, "bad magic, not a GSMCKPT1 file")
    pos = len(MAGIC)

    def u32() -> int:
        nonlocal pos
        if pos + 4 > len(buf):
            raise CheckpointFormatError(pos, "truncated file")
        (v,) = _U32.unpack_from(buf, pos)
        pos += 4
        return v

    out: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        start = pos
        nlen = u32()
        if pos + nlen > len(buf):
            raise CheckpointFormatError(pos, "truncated name")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        rank = u32()
        if rank > MAX_RANK:
            raise CheckpointFormatError(pos - 4, f"rank {rank} exceeds {MAX_RANK}")
        shape = tuple(u32() for _ in range(rank))
        nbytes = 4 * math.prod(shape)
        if pos + nbytes > len(buf):
            raise CheckpointFormatError(pos, f"entry {name!r} declares {nbytes} bytes past end of file")
        if name in out:
            raise CheckpointFormatError(start, f"duplicate entry {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != len(buf):
        raise CheckpointFormatError(pos, "trailing bytes after last entry")
    return out


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
