"""Length-prefixed binary records.

A frame is ``u32-LE length`` followed by that many payload bytes. Structured
payloads are a sequence of tagged fields::

    u16 name-length, name (utf-8), u8 tag, u32 value-length, value

Tags cover the handful of value types the stages exchange.
"""

from __future__ import annotations

import struct
from typing import Any, BinaryIO

import numpy as np


class CodecError(ValueError):
    pass


_T_BYTES, _T_STR, _T_INT, _T_FLOAT, _T_BOOL, _T_NONE, _T_I16, _T_F32, _T_F64, _T_STRS = range(10)


def frame(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def read_frame(stream: BinaryIO) -> bytes | None:
    """Read one frame, or None at a clean end of stream."""
    head = stream.read(4)
    if not head:
        return None
    if len(head) < 4:
        raise CodecError("truncated frame header")
    (n,) = struct.unpack("<I", head)
    body = stream.read(n)
    if len(body) != n:
        raise CodecError(f"truncated frame: expected {n} bytes, got {len(body)}")
    return body


def _encode_value(value: Any) -> tuple[int, bytes]:
    if value is None:
        return _T_NONE, b""
    if isinstance(value, bool):
        return _T_BOOL, b"\x01" if value else b"\x00"
    if isinstance(value, (int, np.integer)):
        return _T_INT, struct.pack("<q", int(value))
    if isinstance(value, (float, np.floating)):
        return _T_FLOAT, struct.pack("<d", float(value))
    if isinstance(value, str):
        return _T_STR, value.encode("utf-8")
    if isinstance(value, (bytes, bytearray, memoryview)):
        return _T_BYTES, bytes(value)
    if isinstance(value, np.ndarray):
        if value.dtype == np.int16:
            return _T_I16, value.astype("<i2").tobytes()
        if value.dtype == np.float32:
            return _T_F32, value.astype("<f4").tobytes()
        if value.dtype == np.float64:
            return _T_F64, value.astype("<f8").tobytes()
        raise CodecError(f"unsupported array dtype {value.dtype}")
    if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
        return _T_STRS, b"".join(frame(v.encode("utf-8")) for v in value)
    raise CodecError(f"cannot encode value of type {type(value).__name__}")


def _decode_value(tag: int, raw: bytes) -> Any:
    if tag == _T_NONE:
        return None
    if tag == _T_BOOL:
        return raw == b"\x01"
    if tag == _T_INT:
        return struct.unpack("<q", raw)[0]
    if tag == _T_FLOAT:
        return struct.unpack("<d", raw)[0]
    if tag == _T_STR:
        return raw.decode("utf-8")
    if tag == _T_BYTES:
        return raw
    if tag == _T_I16:
        return np.frombuffer(raw, dtype="<i2").astype(np.int16)
    if tag == _T_F32:
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)
    if tag == _T_F64:
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if tag == _T_STRS:
        out, pos = [], 0
        while pos < len(raw):
            (n,) = struct.unpack_from("<I", raw, pos)
            out.append(raw[pos + 4 : pos + 4 + n].decode("utf-8"))
            pos += 4 + n
        return out
    raise CodecError(f"unknown field tag {tag}")


def pack_fields(fields: dict[str, Any]) -> bytes:
    parts = []
    for name, value in fields.items():
        key = name.encode("utf-8")
        tag, raw = _encode_value(value)
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<BI", tag, len(raw)) + raw)
    return b"".join(parts)


def unpack_fields(data: bytes) -> dict[str, Any]:
    out: dict[str, Any] = {}
    pos = 0
    try:
        while pos < len(data):
            (klen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            key = data[pos : pos + klen].decode("utf-8")
            pos += klen
            tag, vlen = struct.unpack_from("<BI", data, pos)
            pos += 5
            if pos + vlen > len(data):
                raise CodecError(f"field {key!r} overruns record at byte {pos}")
            out[key] = _decode_value(tag, data[pos : pos + vlen])
            pos += vlen
    except struct.error as exc:
        raise CodecError(f"truncated record at byte {pos}") from exc
    return out
