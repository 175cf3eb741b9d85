"""PIFD: a minimal little-endian container for periodic fields.

Layout::

    b"PIFD"                      magic
    u32 version                  currently 1
    u32 n                        grid extent per axis
    u32 components
    f64 box_length
    f64 time
    components x (u16 len, utf-8 name)
    payload: components*n**3 float64, order (component, x, y, z)
"""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import ValidationError
from .fields import Field3

MAGIC = b"PIFD"
VERSION = 1
_HEAD = struct.Struct("<4sIIIdd")


def atomic_write_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode(field: Field3) -> bytes:
    names = field.names or tuple(f"c{i}" for i in range(field.components))
    parts = [_HEAD.pack(MAGIC, VERSION, field.n, field.components,
                        float(field.box_length), float(field.time))]
    for name in names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(np.ascontiguousarray(field.data, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> Field3:
    if len(blob) < _HEAD.size:
        raise ValidationError("truncated PIFD header")
    magic, version, n, comps, box, time = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ValidationError(f"not a PIFD file (magic {magic!r})")
    if version != VERSION:
        raise ValidationError(f"unsupported PIFD version {version}")
    pos = _HEAD.size
    names = []
    for _ in range(comps):
        (length,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        names.append(blob[pos:pos + length].decode("utf-8"))
        pos += length
    expected = comps * n ** 3 * 8
    if len(blob) - pos != expected:
        raise ValidationError(f"PIFD payload is {len(blob) - pos} bytes, header implies {expected}")
    data = np.frombuffer(blob, dtype="<f8", count=comps * n ** 3, offset=pos)
    return Field3(data.reshape(comps, n, n, n).astype(np.float64), box, time, tuple(names))


def write_pifd(path, field: Field3) -> None:
    atomic_write_bytes(path, encode(field))


def read_pifd(path) -> Field3:
    with open(path, "rb") as fh:
        return decode(fh.read())
