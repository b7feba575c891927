"""Binary checkpoint files.

Layout (little-endian throughout):

    magic "LFFS" | u32 version | u32 param_count
    per param: u16 name_len | name (utf-8) | u8 rank | rank * u32 dims |
               float32 payload (row-major)
    u32 meta_len | metadata JSON (utf-8)

Values are stored as float32 regardless of the run precision; the trailing
metadata block carries the stage tag, seed, architecture and schedule
snapshot. Round trips are bit-identical for float32 inputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelParams

MAGIC = b"LFFS"
VERSION = 1
_MAX_RANK = 8


class CheckpointError(Exception):
    """Malformed, truncated, or incompatible checkpoint file."""


def save_checkpoint(params: ModelParams, path) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(params.entries))
    for name, arr in params.entries:
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:32]}...")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        if arr.ndim > _MAX_RANK:
            raise CheckpointError(f"parameter {name!r} has rank {arr.ndim} > {_MAX_RANK}")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    meta = json.dumps(params.meta, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(meta))
    blob += meta
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.off}, "
                f"file has {len(self.buf)}"
            )
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    entries: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        if name in seen:
            raise CheckpointError(f"{path}: duplicate parameter name {name!r}")
        seen.add(name)
        (rank,) = r.unpack("<B")
        if rank > _MAX_RANK:
            raise CheckpointError(f"{path}: parameter {name!r} rank {rank} too large")
        shape = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = r.take(4 * n)
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        entries.append((name, arr))
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8")) if meta_len else {}
    return ModelParams(entries, meta)
