"""Named-parameter archive.

Layout (little-endian): magic ``SNCK``, u32 version, u32 record count, then per
record: u32 name length, UTF-8 name, u32 ndim, ndim x u32 extents, row-major
float64 data.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError
from .numerics import Parameter

MAGIC = b"SNCK"
VERSION = 1


def save_checkpoint(path: Path, params: Mapping[str, Parameter | np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        p = params[name]
        arr = np.asarray(p.data if isinstance(p, Parameter) else p, dtype="<f8", order="C")
        raw = name.encode()
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: Path) -> dict[str, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(str(exc)) from exc
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint archive")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + n].decode()
            pos += n
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 8
            if pos + size > len(raw):
                raise CheckpointError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted archive ({exc})") from exc
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after last record")
    return out


def restore(params: Mapping[str, Parameter], arrays: Mapping[str, np.ndarray]) -> None:
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise CheckpointError(f"checkpoint mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, p in params.items():
        if arrays[name].shape != p.data.shape:
            raise CheckpointError(f"{name}: shape {arrays[name].shape} != {p.data.shape}")
        p.data = arrays[name].copy()
