"""Minimal binary container for named tensors.

Layout (all integers little-endian)::

    magic   4 bytes  b"CRTN"
    version u16      1
    count   u32      number of tensors
    then per tensor:
      name_len u16, name (utf-8)
      dtype    u8    code from DTYPES
      ndim     u8
      shape    u32 * ndim
      payload  prod(shape) * itemsize bytes, C order, little-endian
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CRTN"
VERSION = 1
DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1", 4: "<i4"}
_CODES = {np.dtype(v): k for k, v in DTYPES.items()}


class FormatError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(arr)
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        if dt not in _CODES:
            raise TypeError(f"unsupported dtype {a.dtype} for {name!r}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", _CODES[dt], a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(np.ascontiguousarray(a, dtype=DTYPES[_CODES[dt]]).tobytes())
    return b"".join(out)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise FormatError("not a tensor container (bad magic)")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    pos = 10
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            code, ndim = struct.unpack_from("<BB", buf, pos)
            shape = struct.unpack_from(f"<{ndim}I", buf, pos + 2)
            pos += 2 + 4 * ndim
            dt = np.dtype(DTYPES[code])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(buf):
                raise FormatError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise FormatError(f"corrupt container: {exc}") from exc
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.write_bytes(dumps(tensors))
    return path


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def load_bundled(name: str) -> dict[str, np.ndarray]:
    from importlib.resources import files

    return loads(files("crcim.data").joinpath(name).read_bytes())
