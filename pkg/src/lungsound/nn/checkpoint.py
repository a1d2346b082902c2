"""Versioned binary model checkpoints.

Layout, all little-endian:

    magic "LSCK" | u16 version | 16-byte architecture tag | u16 n_classes |
    u16 n_experts | u32 param record count | param records |
    u32 stat record count | stat records | u32 CRC-32 of everything before

Each record is: u16 name length, UTF-8 name, u8 dtype code (0 = float32,
1 = float64), u8 rank, u32 dims, then the row-major payload.  Stat records
carry batch-norm running statistics and use the same encoding.
"""

from __future__ import annotations

import io
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from lungsound.nn.store import ParamStore

CHECKPOINT_MAGIC = b"LSCK"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEAD = struct.Struct("<4sH16sHHI")


class CheckpointError(RuntimeError):
    pass


@dataclass
class CheckpointData:
    arch: str
    n_classes: int
    n_experts: int
    params: dict[str, np.ndarray]
    stats: dict[str, np.ndarray]


def _write_record(buf: io.BytesIO, name: str, value: np.ndarray) -> None:
    raw = name.encode("utf-8")
    dt = np.dtype(value.dtype)
    if dt not in _DTYPE_CODES:
        raise CheckpointError(f"unsupported dtype {dt} for {name!r}")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<BB", _DTYPE_CODES[dt], value.ndim))
    buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
    buf.write(np.ascontiguousarray(value, dtype=dt.newbyteorder("<")).tobytes())


def _read_record(view: memoryview, off: int) -> tuple[str, np.ndarray, int]:
    (nlen,) = struct.unpack_from("<H", view, off)
    off += 2
    name = bytes(view[off : off + nlen]).decode("utf-8")
    off += nlen
    code, rank = struct.unpack_from("<BB", view, off)
    off += 2
    if code not in _CODE_DTYPES:
        raise CheckpointError(f"unknown dtype code {code} in record {name!r}")
    dims = struct.unpack_from(f"<{rank}I", view, off)
    off += 4 * rank
    dt = _CODE_DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize if rank else dt.itemsize
    value = np.frombuffer(view[off : off + nbytes], dtype=dt).reshape(dims).copy()
    off += nbytes
    return name, value, off


def save_checkpoint(
    path: str | os.PathLike,
    arch: str,
    n_classes: int,
    n_experts: int,
    store: ParamStore,
    stats: dict[str, np.ndarray],
) -> None:
    tag = arch.encode("utf-8")
    if len(tag) > 16:
        raise CheckpointError(f"architecture tag too long: {arch!r}")
    buf = io.BytesIO()
    buf.write(_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, tag.ljust(16, b"\0"),
                         n_classes, n_experts, len(store)))
    for name, p in store.items():
        _write_record(buf, name, p.value)
    buf.write(struct.pack("<I", len(stats)))
    for name, value in stats.items():
        _write_record(buf, name, np.asarray(value))
    body = buf.getvalue()
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> CheckpointData:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEAD.size + 4:
        raise CheckpointError(f"checkpoint {path} is truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"checkpoint {path} failed its checksum")
    magic, version, tag, n_classes, n_experts, n_params = _HEAD.unpack_from(body, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"checkpoint {path} has wrong magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    view = memoryview(body)
    off = _HEAD.size
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        name, value, off = _read_record(view, off)
        params[name] = value
    (n_stats,) = struct.unpack_from("<I", view, off)
    off += 4
    stats: dict[str, np.ndarray] = {}
    for _ in range(n_stats):
        name, value, off = _read_record(view, off)
        stats[name] = value
    if off != len(body):
        raise CheckpointError(f"checkpoint {path} has {len(body) - off} trailing bytes")
    return CheckpointData(tag.rstrip(b"\0").decode("utf-8"), n_classes, n_experts,
                          params, stats)
