"""Flat named-tensor container.

Layout (all integers little-endian)::

    magic   b"SZRT"
    version u32 (currently 1)
    count   u32
    repeated `count` times, names in sorted order:
        name_len u16, name utf-8 bytes
        ndim u8, dims u32 * ndim
        values float64 little-endian, C order
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from ..errors import BundleCorrupt

MAGIC = b"SZRT"
VERSION = 1


def dumps_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")  # keeps 0-d shapes
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads_tensors(blob: bytes) -> dict[str, np.ndarray]:
    try:
        view = memoryview(blob)
        if bytes(view[:4]) != MAGIC:
            raise BundleCorrupt("not a tensor container (bad magic)")
        version, count = struct.unpack_from("<II", view, 4)
        if version != VERSION:
            raise BundleCorrupt(f"unsupported tensor container version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + n]).decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", view, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(view, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            out[name] = arr.astype(np.float64)
        if pos != len(view):
            raise BundleCorrupt("trailing bytes after tensor container")
        return out
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise BundleCorrupt(f"malformed tensor container: {exc}") from None


def save_tensors(tensors: dict[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_bytes(dumps_tensors(tensors))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    return loads_tensors(Path(path).read_bytes())
