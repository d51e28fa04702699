"""Value types shared by every stage of the system.

All times are integer milliseconds on a per-run stream epoch. Durations are
plain ``int`` milliseconds; only absolute instants are wrapped in
:class:`Timestamp`.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SAMPLE_RATE = 16000


class MediaError(ValueError):
    """Raised for malformed or incompatible media."""


@dataclass(frozen=True, order=True)
class Timestamp:
    """Instant on the stream clock with exactly 1 ms resolution."""

    millis: int

    def __post_init__(self):
        if isinstance(self.millis, bool) or not isinstance(self.millis, (int, np.integer)):
            raise TypeError(f"Timestamp needs integer milliseconds, got {self.millis!r}")
        if self.millis < 0:
            raise ValueError(f"Timestamp cannot be negative: {self.millis}")
        object.__setattr__(self, "millis", int(self.millis))

    def __add__(self, delta: int) -> Timestamp:
        if isinstance(delta, Timestamp):
            raise TypeError("cannot add two Timestamps")
        return Timestamp(self.millis + _as_ms(delta))

    def __sub__(self, other):
        if isinstance(other, Timestamp):
            return self.millis - other.millis
        return Timestamp(self.millis - _as_ms(other))

    def __int__(self) -> int:
        return self.millis

    def __repr__(self) -> str:
        return f"Timestamp({self.millis})"


def _as_ms(delta) -> int:
    if isinstance(delta, bool) or not isinstance(delta, (int, np.integer)):
        raise TypeError(f"durations are integer milliseconds, got {delta!r}")
    return int(delta)


@dataclass(frozen=True)
class SegmentId:
    uuid: uuid.UUID
    birth: Timestamp

    @classmethod
    def from_rng(cls, rng, birth: Timestamp) -> SegmentId:
        """Build a reproducible v4 UUID from a ``random.Random``-like source."""
        return cls(uuid.UUID(int=rng.getrandbits(128), version=4), birth)

    def __str__(self) -> str:
        return str(self.uuid)


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono 16-bit PCM with a start timestamp.

    The sample array is stored read-only so buffers can be shared freely.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    start: Timestamp = field(default_factory=lambda: Timestamp(0))

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise MediaError(f"sample_rate must be positive, got {self.sample_rate}")
        arr = np.asarray(self.samples)
        if arr.ndim != 1:
            raise MediaError(f"audio must be mono (1-D), got shape {arr.shape}")
        if arr.dtype != np.int16:
            if arr.size and (arr.min() < -32768 or arr.max() > 32767):
                raise MediaError("samples outside the signed 16-bit range")
            arr = arr.astype(np.int16)
        else:
            arr = arr.copy() if arr.flags.writeable else arr
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def duration_ms(self) -> int:
        return int(np.floor(1000 * len(self.samples) / self.sample_rate + 0.5))

    @property
    def end(self) -> Timestamp:
        return self.start + self.duration_ms

    @property
    def nbytes(self) -> int:
        return 2 * len(self.samples)

    def slice(self, lo: int, hi: int) -> AudioBuffer:
        """Samples ``[lo, hi)`` re-stamped at their position in this buffer."""
        lo = max(0, lo)
        hi = min(len(self.samples), hi)
        offset_ms = int(np.floor(1000 * lo / self.sample_rate + 0.5))
        return AudioBuffer(self.samples[lo:hi], self.sample_rate, self.start + offset_ms)

    def as_float(self) -> np.ndarray:
        return self.samples.astype(np.float64) / 32768.0

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AudioBuffer):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.start == other.start
            and np.array_equal(self.samples, other.samples)
        )

    def __repr__(self) -> str:
        return (
            f"AudioBuffer({len(self.samples)} samples @ {self.sample_rate} Hz, "
            f"start={self.start.millis} ms, {self.duration_ms} ms)"
        )


def audio_concat(a: AudioBuffer, b: AudioBuffer, tolerance_ms: int = 1) -> AudioBuffer:
    if a.sample_rate != b.sample_rate:
        raise MediaError(f"sample-rate mismatch: {a.sample_rate} vs {b.sample_rate}")
    if len(b) == 0:
        return a
    if len(a) == 0:
        return b
    gap = b.start - a.end
    if abs(gap) > tolerance_ms:
        raise MediaError(
            f"non-contiguous audio: second buffer starts at {b.start.millis} ms, "
            f"expected {a.end.millis} ms (+/-{tolerance_ms})"
        )
    return AudioBuffer(np.concatenate([a.samples, b.samples]), a.sample_rate, a.start)


@dataclass(frozen=True)
class Segment:
    id: SegmentId
    audio: AudioBuffer
    boundary_confidence: float = 1.0
    forced_split: bool = False
    lang_src: str = "en"
    lang_dst: str = "es"

    def __post_init__(self):
        if not 0.0 <= self.boundary_confidence <= 1.0:
            raise ValueError(f"boundary_confidence out of [0, 1]: {self.boundary_confidence}")

    @property
    def start(self) -> Timestamp:
        return self.audio.start

    @property
    def end(self) -> Timestamp:
        return self.audio.end

    @property
    def duration_ms(self) -> int:
        return self.audio.duration_ms
