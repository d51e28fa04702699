"""RIFF/WAVE reading and writing for 16-bit mono PCM.

The reader walks chunks by hand instead of using the ``wave`` module so
that errors can say which chunk is wrong and where it sits in the file.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .types import AudioBuffer, MediaError, Timestamp


class WavError(MediaError):
    pass


def parse_wav(data: bytes, source: str = "<bytes>") -> AudioBuffer:
    if len(data) < 12:
        raise WavError(f"{source}: truncated RIFF header at byte offset {len(data)} (need 12 bytes)")
    if data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError(f"{source}: not a RIFF/WAVE file (chunk 'RIFF' at byte offset 0)")
    pos = 12
    fmt = None
    samples = None
    while pos < len(data):
        if pos + 8 > len(data):
            raise WavError(f"{source}: truncated chunk header at byte offset {pos}")
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        name = cid.decode("latin-1")
        body_at = pos + 8
        if body_at + size > len(data):
            raise WavError(
                f"{source}: chunk '{name}' at byte offset {pos} declares {size} bytes "
                f"but file ends at byte offset {len(data)}"
            )
        body = data[body_at : body_at + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavError(f"{source}: chunk 'fmt ' at byte offset {pos} is too short ({size} bytes)")
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
            if tag == 0xFFFE and size >= 26:
                tag = struct.unpack_from("<H", body, 24)[0]
            if tag != 1:
                raise WavError(f"{source}: chunk 'fmt ' at byte offset {pos}: format tag {tag} is not PCM")
            if channels != 1:
                raise WavError(f"{source}: chunk 'fmt ' at byte offset {pos}: {channels} channels, only mono is accepted")
            if bits != 16:
                raise WavError(f"{source}: chunk 'fmt ' at byte offset {pos}: {bits}-bit samples, only 16-bit is accepted")
            if rate == 0:
                raise WavError(f"{source}: chunk 'fmt ' at byte offset {pos}: sample rate is zero")
            fmt = rate
        elif cid == b"data":
            if fmt is None:
                raise WavError(f"{source}: chunk 'data' at byte offset {pos} precedes chunk 'fmt '")
            if size % 2:
                raise WavError(f"{source}: chunk 'data' at byte offset {pos} has odd length {size}")
            samples = np.frombuffer(body, dtype="<i2").astype(np.int16)
        pos = body_at + size + (size & 1)
    if fmt is None:
        raise WavError(f"{source}: no 'fmt ' chunk found")
    if samples is None:
        raise WavError(f"{source}: no 'data' chunk found")
    return AudioBuffer(samples, fmt, Timestamp(0))


def read_wav(path: str | Path) -> AudioBuffer:
    path = Path(path)
    return parse_wav(path.read_bytes(), str(path))


def wav_bytes(audio: AudioBuffer) -> bytes:
    body = audio.samples.astype("<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, audio.sample_rate, audio.sample_rate * 2, 2, 16)
    return (
        b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(body)) + b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", len(body)) + body
    )


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    Path(path).write_bytes(wav_bytes(audio))
