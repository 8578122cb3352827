"""SLSZW1 named-array container.

Layout: the 6-byte magic ``SLSZW1`` then, until end of file, records of
``u16 name_len | utf-8 name | u8 rank | u32 dims[rank] | f32 data``, all
little-endian.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError

MAGIC = b"SLSZW1"


def dump_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr)
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", a.ndim))
        out.write(struct.pack(f"<{a.ndim}I", *a.shape))
        out.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return out.getvalue()


def load_arrays(data: bytes) -> dict[str, np.ndarray]:
    if data[: len(MAGIC)] != MAGIC:
        raise DataError("not an SLSZW1 checkpoint")
    pos = len(MAGIC)
    arrays: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise DataError("checkpoint is truncated")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    return arrays


def save_arrays(arrays: Mapping[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_bytes(dump_arrays(arrays))


def read_arrays(path: str | Path) -> dict[str, np.ndarray]:
    return load_arrays(Path(path).read_bytes())
