"""
Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic    8 bytes  b"MCGCKPT\\0"
    version  u32
    count    u32
    entries  count x (name_len u16, name utf-8, dtype u8, ndim u8,
                      shape u32 x ndim, offset u64, nbytes u64)
    payload  raw little-endian tensor bytes, offsets relative to payload start

Metadata (optimizer step, schedule counters, configuration) is stored as a
uint8 entry named ``meta/json``.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Any, Dict, Tuple

import numpy as np

from ..errors import McgAsrError
from ..utils import cleanup_temp_file

MAGIC = b"MCGCKPT\0"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {dt: code for code, dt in _DTYPES.items()}
META_KEY = "meta/json"


class CheckpointError(McgAsrError):
    """Unreadable or incompatible checkpoint file."""


def _code_for(arr: np.ndarray) -> Tuple[int, np.ndarray]:
    if arr.dtype.kind == "f":
        arr = arr.astype("<f8" if arr.dtype.itemsize == 8 else "<f4", copy=False)
    elif arr.dtype.kind in "iub" and arr.dtype != np.uint8:
        arr = arr.astype("<i8", copy=False)
    return _CODES[np.dtype(arr.dtype.str)], np.ascontiguousarray(arr)


def save_checkpoint(path: str, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> None:
    entries = dict(arrays)
    entries[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)

    header = bytearray()
    payloads = []
    offset = 0
    for name, value in entries.items():
        code, arr = _code_for(np.asarray(value))
        raw = arr.tobytes()
        encoded = name.encode("utf-8")
        header += struct.pack("<H", len(encoded)) + encoded
        header += struct.pack("<BB", code, arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
        header += struct.pack("<QQ", offset, len(raw))
        payloads.append(raw)
        offset += len(raw)

    tmp = f"{path}.tmp"
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(entries)))
            fh.write(header)
            for raw in payloads:
                fh.write(raw)
        os.replace(tmp, path)
    except OSError as exc:
        cleanup_temp_file(tmp)
        raise CheckpointError(f"{path}: cannot write checkpoint: {exc}") from exc


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 16
    table = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        offset, nbytes = struct.unpack_from("<QQ", blob, pos)
        pos += 16
        table.append((name, code, shape, offset, nbytes))

    arrays: Dict[str, np.ndarray] = {}
    for name, code, shape, offset, nbytes in table:
        start = pos + offset
        arr = np.frombuffer(blob[start:start + nbytes], dtype=_DTYPES[code]).reshape(shape)
        arrays[name] = arr.copy()
    meta = json.loads(arrays.pop(META_KEY).tobytes().decode("utf-8"))
    return arrays, meta
