"""
Versioned tensor container shared by checkpoints and manifest tensors.

Layout (all integers little-endian):

    b"STWD"                 magic
    u32                     format version
    u32 + bytes             JSON metadata blob (utf-8)
    u32                     tensor count
    per tensor:
        u16 + bytes         name (utf-8)
        u8                  dtype code (0 = float32)
        u8 + u32 * ndim     shape
        bytes               little-endian data, C order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np

from app.errors import CheckpointError

MAGIC = b"STWD"
FORMAT_VERSION = 1

_DTYPES = {0: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype("<f4"): 0}


def dumps(tensors: Mapping[str, np.ndarray], metadata: Mapping | None = None) -> bytes:
    meta_blob = json.dumps(dict(metadata or {}), sort_keys=True).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<I", len(meta_blob)) + meta_blob
    out += struct.pack("<I", len(tensors))
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded)) + encoded
        out += struct.pack("<B", _DTYPE_CODES[arr.dtype])
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes(order="C")
    return bytes(out)


class _Reader:
    def __init__(self, blob: bytes) -> None:
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.blob):
            raise CheckpointError(
                f"truncated tensor file: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def loads(blob: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    reader = _Reader(blob)
    magic = reader.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}: not a stemdiff tensor file")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"tensor file format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    (meta_len,) = reader.unpack("<I")
    try:
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata blob: {exc}") from exc

    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8", errors="replace")
        (code,) = reader.unpack("<B")
        if code not in _DTYPES:
            raise CheckpointError(f"tensor '{name}' has unknown dtype code {code}")
        dtype = _DTYPES[code]
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        data = reader.take(nbytes)
        tensors[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return tensors, metadata


def save(path: str | Path, tensors: Mapping[str, np.ndarray], metadata: Mapping | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(tensors, metadata))


def load(path: str | Path) -> Tuple[Dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"tensor file not found: {path}")
    return loads(path.read_bytes())
