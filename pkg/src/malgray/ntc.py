"""NTC named-tensor container.

Layout, all integers little-endian::

    b"NTC1"
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 dtype code, u8 rank, rank * u32 dims
    payloads in table order, row-major

dtype codes: 0 = float32, 1 = float64.
"""

from __future__ import annotations

import io
import struct
from typing import Mapping

import numpy as np

from .errors import BadMagic, NameMismatch, ShapeMismatch

MAGIC = b"NTC1"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class TruncatedNtc(BadMagic):
    code = "TruncatedNtc"


def encode_ntc(tensors: Mapping[str, np.ndarray]) -> bytes:
    head = io.BytesIO()
    head.write(MAGIC)
    head.write(struct.pack("<I", len(tensors)))
    payload = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        head.write(struct.pack("<H", len(raw)))
        head.write(raw)
        head.write(struct.pack("<BB", code, arr.ndim))
        head.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    return head.getvalue() + b"".join(payload)


def decode_ntc(buf: bytes) -> dict:
    if buf[:4] != MAGIC:
        raise BadMagic(f"not an NTC container (magic {buf[:4]!r})")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise TruncatedNtc("NTC table is truncated")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = take("<I")
    table = []
    for _ in range(count):
        (nlen,) = take("<H")
        if pos + nlen > len(buf):
            raise TruncatedNtc("NTC table is truncated")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, rank = take("<BB")
        if code not in DTYPES:
            raise BadMagic(f"{name}: unknown dtype code {code}")
        dims = take(f"<{rank}I")
        table.append((name, DTYPES[code], dims))
    need = sum(int(np.prod(d, dtype=np.int64)) * dt.itemsize for _, dt, d in table)
    if len(buf) - pos != need:
        raise TruncatedNtc(f"payload is {len(buf) - pos} bytes, table describes {need}")
    out = {}
    for name, dt, dims in table:
        n = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(dims).astype(dt.newbyteorder("="))
        pos += n * dt.itemsize
    return out


def write_ntc(tensors: Mapping[str, np.ndarray], path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ntc(tensors))


def read_ntc(path) -> dict:
    with open(path, "rb") as fh:
        return decode_ntc(fh.read())


def check_names(tensors: Mapping[str, np.ndarray], expected: Mapping[str, tuple]) -> None:
    """Require exactly the expected names with the expected shapes."""
    missing = set(expected) - set(tensors)
    extra = set(tensors) - set(expected)
    if missing or extra:
        raise NameMismatch(missing, extra)
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise ShapeMismatch(f"{name}: file has {tuple(tensors[name].shape)}, expected {tuple(shape)}")
