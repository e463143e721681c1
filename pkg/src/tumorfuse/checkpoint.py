"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"FBST"  u16 version  u32 record_count
    record_count × { u16 name_len, name (utf-8), u32 rank, rank × u32 dims, float32 payload }
    u32 meta_len, metadata (utf-8 JSON, sorted keys)

Metadata holds run information (config hash, seed, branch spec, decision
templates). Floats in metadata are written with ``repr`` precision, so they
round-trip exactly.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"FBST"
VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype.kind != "f":
            raise CheckpointError(f"tensor {name!r} is not real-valued ({arr.dtype})")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, count = struct.unpack_from("<HI", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 10
        tensors: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            tensors[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
        (meta_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        metadata = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if pos + meta_len != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos - meta_len} trailing bytes")
    return tensors, metadata
