"""Canonical binary encoding used for hashing, signing and size accounting.

Every value is written as a one-byte tag followed by a fixed-width or
length-prefixed body. Lengths and integers are big-endian. The layout is
field-ordered and contains no padding, so two encoders that agree on field
order always agree byte-for-byte.

    tag  body
    N    (none)
    T/F  (booleans)
    I    int64
    D    IEEE-754 float64
    S    u32 length + UTF-8 bytes
    B    u32 length + raw bytes
    L    u32 count  + items
    M    u32 count  + (key S, value) pairs, keys sorted
"""

from __future__ import annotations

import struct
from typing import Any

_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")


class DecodeError(ValueError):
    pass


class Encoded(bytes):
    """A value that is already in canonical form; embedded verbatim."""


def encode(value: Any) -> bytes:
    out = bytearray()
    _write(out, value)
    return bytes(out)


def _write(out: bytearray, value: Any) -> None:
    if type(value) is Encoded:
        out += value
    elif value is None:
        out += b"N"
    elif value is True:
        out += b"T"
    elif value is False:
        out += b"F"
    elif isinstance(value, int):
        out += b"I"
        out += _I64.pack(value)
    elif isinstance(value, float):
        out += b"D"
        out += _F64.pack(value)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out += b"S"
        out += _U32.pack(len(raw))
        out += raw
    elif isinstance(value, (bytes, bytearray)):
        out += b"B"
        out += _U32.pack(len(value))
        out += value
    elif isinstance(value, (list, tuple)):
        out += b"L"
        out += _U32.pack(len(value))
        for item in value:
            _write(out, item)
    elif isinstance(value, dict):
        out += b"M"
        out += _U32.pack(len(value))
        for key in sorted(value):
            if not isinstance(key, str):
                raise TypeError(f"map keys must be str, got {type(key).__name__}")
            _write(out, key)
            _write(out, value[key])
    else:
        raise TypeError(f"cannot encode {type(value).__name__}")


def decode(data: bytes) -> Any:
    value, pos = _read(memoryview(data), 0)
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes")
    return value


def _need(buf: memoryview, pos: int, n: int) -> None:
    if pos + n > len(buf):
        raise DecodeError(f"truncated input at offset {pos}")


def _read(buf: memoryview, pos: int) -> tuple[Any, int]:
    _need(buf, pos, 1)
    tag = bytes(buf[pos:pos + 1])
    pos += 1
    if tag == b"N":
        return None, pos
    if tag == b"T":
        return True, pos
    if tag == b"F":
        return False, pos
    if tag == b"I":
        _need(buf, pos, 8)
        return _I64.unpack_from(buf, pos)[0], pos + 8
    if tag == b"D":
        _need(buf, pos, 8)
        return _F64.unpack_from(buf, pos)[0], pos + 8
    if tag in (b"S", b"B"):
        _need(buf, pos, 4)
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        _need(buf, pos, n)
        raw = bytes(buf[pos:pos + n])
        if tag == b"B":
            return raw, pos + n
        try:
            return raw.decode("utf-8"), pos + n
        except UnicodeDecodeError as exc:
            raise DecodeError(f"bad utf-8 at offset {pos}") from exc
    if tag == b"L":
        _need(buf, pos, 4)
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        items = []
        for _ in range(n):
            item, pos = _read(buf, pos)
            items.append(item)
        return items, pos
    if tag == b"M":
        _need(buf, pos, 4)
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        result = {}
        for _ in range(n):
            key, pos = _read(buf, pos)
            if not isinstance(key, str):
                raise DecodeError("map key is not a string")
            result[key], pos = _read(buf, pos)
        return result, pos
    raise DecodeError(f"unknown tag {tag!r} at offset {pos - 1}")
