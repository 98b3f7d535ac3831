"""Canonical binary encoding.

Every value has exactly one encoding, so structural equality of two values
is byte equality of their encodings. Layout (all lengths are unsigned
LEB128 varints):

====  ==========================================================
tag   payload
====  ==========================================================
0x00  None
0x01  False
0x02  True
0x03  int, zigzag varint
0x04  bytes: length, raw bytes
0x05  str: length, UTF-8 bytes
0x06  list/tuple: count, items in order
0x07  set/frozenset: count, items sorted by their own encoding
0x08  mapping: count, (key, value) pairs sorted by encoded key
0x09  record: type name (as str), then each field in declaration order
0x0A  enum member: class name (as str), value (encoded)
====  ==========================================================

Records are dataclasses; ``decode`` rebuilds them through the ``register``
table.
"""

from __future__ import annotations

import dataclasses
import enum
from typing import Any

_TYPES: dict[str, type] = {}


def register(cls: type) -> type:
    """Class decorator making a dataclass or enum decodable."""
    _TYPES[cls.__name__] = cls
    return cls


def _varint(n: int, out: bytearray) -> None:
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def _enc(obj: Any, out: bytearray) -> None:
    if obj is None:
        out.append(0x00)
    elif obj is False:
        out.append(0x01)
    elif obj is True:
        out.append(0x02)
    elif isinstance(obj, enum.Enum):
        out.append(0x0A)
        _enc(type(obj).__name__, out)
        _enc(obj.value, out)
    elif isinstance(obj, int):
        out.append(0x03)
        _varint(obj << 1 if obj >= 0 else ((-obj) << 1) - 1, out)
    elif isinstance(obj, (bytes, bytearray)):
        out.append(0x04)
        _varint(len(obj), out)
        out.extend(obj)
    elif isinstance(obj, str):
        raw = obj.encode("utf-8")
        out.append(0x05)
        _varint(len(raw), out)
        out.extend(raw)
    elif isinstance(obj, (list, tuple)):
        out.append(0x06)
        _varint(len(obj), out)
        for item in obj:
            _enc(item, out)
    elif isinstance(obj, (set, frozenset)):
        out.append(0x07)
        _varint(len(obj), out)
        for chunk in sorted(encode(item) for item in obj):
            out.extend(chunk)
    elif isinstance(obj, dict):
        out.append(0x08)
        _varint(len(obj), out)
        for k, v in sorted((encode(k), encode(v)) for k, v in obj.items()):
            out.extend(k)
            out.extend(v)
    elif dataclasses.is_dataclass(obj):
        out.append(0x09)
        _enc(type(obj).__name__, out)
        for f in dataclasses.fields(obj):
            _enc(getattr(obj, f.name), out)
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def encode(obj: Any) -> bytes:
    out = bytearray()
    _enc(obj, out)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def byte(self) -> int:
        b = self.data[self.pos]
        self.pos += 1
        return b

    def varint(self) -> int:
        shift = n = 0
        while True:
            b = self.byte()
            n |= (b & 0x7F) << shift
            if not b & 0x80:
                return n
            shift += 7

    def take(self, n: int) -> bytes:
        chunk = self.data[self.pos:self.pos + n]
        if len(chunk) != n:
            raise ValueError("truncated encoding")
        self.pos += n
        return chunk

    def value(self) -> Any:
        tag = self.byte()
        if tag == 0x00:
            return None
        if tag == 0x01:
            return False
        if tag == 0x02:
            return True
        if tag == 0x03:
            z = self.varint()
            return (z >> 1) ^ -(z & 1)
        if tag == 0x04:
            return self.take(self.varint())
        if tag == 0x05:
            return self.take(self.varint()).decode("utf-8")
        if tag == 0x06:
            return tuple(self.value() for _ in range(self.varint()))
        if tag == 0x07:
            return frozenset(self.value() for _ in range(self.varint()))
        if tag == 0x08:
            n = self.varint()
            return {self.value(): self.value() for _ in range(n)}
        if tag == 0x09:
            cls = _TYPES[self.value()]
            return cls(*(self.value() for _ in dataclasses.fields(cls)))
        if tag == 0x0A:
            cls = _TYPES[self.value()]
            return cls(self.value())
        raise ValueError(f"unknown tag 0x{tag:02x} at offset {self.pos - 1}")


def decode(data: bytes) -> Any:
    reader = _Reader(data)
    value = reader.value()
    if reader.pos != len(data):
        raise ValueError("trailing bytes after value")
    return value
