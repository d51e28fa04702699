from .clock import ClockUsageError, MediaClock, Timer
from .process import LATE, Event, Process, spawn, timeout
from .types import (
    DEFAULT_SAMPLE_RATE,
    AudioBuffer,
    MediaError,
    Segment,
    SegmentId,
    Timestamp,
    audio_concat,
)
from .wav import WavError, read_wav, write_wav


def clock_advance(clock: MediaClock, delta_ms: int) -> Timestamp:
    return clock.advance(delta_ms)


__all__ = [
    "DEFAULT_SAMPLE_RATE",
    "LATE",
    "AudioBuffer",
    "ClockUsageError",
    "Event",
    "MediaClock",
    "MediaError",
    "Process",
    "Segment",
    "SegmentId",
    "Timer",
    "Timestamp",
    "WavError",
    "audio_concat",
    "clock_advance",
    "read_wav",
    "spawn",
    "timeout",
    "write_wav",
]
