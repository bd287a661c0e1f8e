"""TOSM binary container for named arrays (checkpoints, displacement fields, datasets).

Layout, all little-endian::

    b"TOSM"  version:u8
    repeated:
        name_len:u16  name:utf-8  dtype:u8  ndim:u8  dims:u32*ndim  data

``dtype`` codes: 1 = f64, 2 = i64, 3 = u8. Entries are written in the order
given, so equal inputs produce equal bytes.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"TOSM"
VERSION = 1

_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


class ContainerError(ValueError):
    pass


def _code_for(arr: np.ndarray) -> tuple[int, np.ndarray]:
    if arr.dtype == np.bool_:
        return 3, arr.astype("u1")
    if np.issubdtype(arr.dtype, np.floating):
        return 1, arr.astype("<f8")
    if np.issubdtype(arr.dtype, np.unsignedinteger) and arr.dtype.itemsize == 1:
        return 3, arr.astype("u1")
    if np.issubdtype(arr.dtype, np.integer):
        return 2, arr.astype("<i8")
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<B", VERSION)
    for name, value in arrays.items():
        arr = np.asarray(value)
        code, arr = _code_for(arr)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise ContainerError(f"name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ContainerError(f"{name}: too many dimensions")
        out += struct.pack("<H", len(raw_name)) + raw_name
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr).tobytes(order="C")
    return bytes(out)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise ContainerError("bad magic, not a TOSM container")
    if len(buf) < 5 or buf[4] != VERSION:
        raise ContainerError(f"unsupported container version {buf[4] if len(buf) > 4 else None}")
    pos = 5
    arrays: dict[str, np.ndarray] = {}
    try:
        while pos < len(buf):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            if code not in _DTYPES:
                raise ContainerError(f"{name}: unknown dtype code {code}")
            dt = _DTYPES[code]
            count = int(np.prod(dims, dtype=np.int64))
            nbytes = count * dt.itemsize
            if pos + nbytes > len(buf):
                raise ContainerError(f"{name}: truncated data")
            arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos).reshape(dims)
            pos += nbytes
            arrays[name] = arr.astype(dt.newbyteorder("="), copy=True)
    except struct.error as exc:
        raise ContainerError(f"truncated container: {exc}") from None
    return arrays


def save(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
