"""Synthetic speech-like clips with matching frame records.

Speech runs continuously except for a pause centred on every multiple of
``period_ms``. The speech energy follows a slowly varying seeded envelope;
the same envelope drives the frames' ``mouth_motion`` (optionally delayed),
so audio/visual alignment has something real to lock onto.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .core.types import AudioBuffer, Timestamp
from .visual.ring import FrameRecord, frame_ts

SPEC_RE = re.compile(r"^synthetic:(?P<num>\d+(?:\.\d+)?)(?P<unit>ms|s)?$")


@dataclass(frozen=True)
class SyntheticClip:
    length_ms: int
    period_ms: int = 2000
    pause_ms: int = 600
    sample_rate: int = 16000
    fps: float = 30.0
    seed: int = 0
    av_delay_ms: int = 0
    level: float = 0.5
    complete_hints: bool = True

    def __post_init__(self):
        if self.length_ms < 0:
            raise ValueError("length must be non-negative")
        if self.pause_ms >= self.period_ms:
            raise ValueError("pause must be shorter than the period")

    @classmethod
    def from_spec(cls, spec: str, **kw) -> SyntheticClip:
        m = SPEC_RE.match(spec.strip())
        if not m:
            raise ValueError(f"bad synthetic input {spec!r}; expected e.g. synthetic:8s")
        num = float(m["num"])
        ms = num if m["unit"] == "ms" else num * 1000
        return cls(int(round(ms)), **kw)

    # layout

    def pauses(self) -> list[tuple[int, int]]:
        """Pause intervals ``[lo, hi)`` clipped to the clip."""
        out = []
        half = self.pause_ms // 2
        k = 1
        while k * self.period_ms - half < self.length_ms:
            c = k * self.period_ms
            out.append((c - half, min(c + self.pause_ms - half, self.length_ms)))
            k += 1
        return out

    def speaking(self, t_ms: np.ndarray) -> np.ndarray:
        t = np.asarray(t_ms, dtype=np.float64)
        on = (t >= 0) & (t < self.length_ms)
        for lo, hi in self.pauses():
            on &= ~((t >= lo) & (t < hi))
        return on

    def envelope(self, t_ms) -> np.ndarray:
        """Speech energy envelope in [0.35, 1] while speaking, 0 in pauses."""
        t = np.asarray(t_ms, dtype=np.float64) / 1000.0
        rng = np.random.default_rng(self.seed)
        freqs = rng.uniform(1.5, 5.5, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        g = sum(np.sin(2 * np.pi * f * t + p) for f, p in zip(freqs, phases)) / 3.0
        return np.where(self.speaking(np.asarray(t_ms)), 0.675 + 0.325 * g, 0.0)

    @cached_property
    def audio(self) -> AudioBuffer:
        n = self.length_ms * self.sample_rate // 1000
        t_ms = np.arange(n) * 1000.0 / self.sample_rate
        rng = np.random.default_rng(self.seed + 1)
        f0 = 140.0 + 40.0 * rng.random()
        ts = t_ms / 1000.0
        voice = sum(np.sin(2 * np.pi * f0 * h * ts) / h for h in (1, 2, 3, 5)) / 1.9
        x = self.level * self.envelope(t_ms) * voice
        dither = rng.integers(-2, 3, size=n)
        samples = np.clip(np.round(x * 32767) + dither, -32768, 32767).astype(np.int16)
        return AudioBuffer(samples, self.sample_rate, Timestamp(0))

    @cached_property
    def frames(self) -> list[FrameRecord]:
        n = int(math.ceil(self.length_ms * self.fps / 1000.0))
        ts = np.array([frame_ts(i, self.fps) for i in range(n)], dtype=np.int64)
        ts = ts[ts < self.length_ms]
        shifted = ts - self.av_delay_ms
        motion = np.where(shifted >= 0, self.envelope(shifted), 0.0)
        return [FrameRecord(Timestamp(int(t)), i, None, float(max(0.0, m))) for i, (t, m) in enumerate(zip(ts, motion))]

    def hint(self, start_ms: int, end_ms: int) -> Optional[str]:
        """Fast-pass transcript hint for the speech in ``[start_ms, end_ms)``."""
        if self.complete_hints:
            return f"utterance ending at {end_ms} ms."
        return "and then we"

    def expected_cuts(self, min_segment_ms: int = 1500, max_segment_ms: Optional[int] = 10000) -> list[int]:
        """Cut positions the segmenter should produce, derived from the layout alone.

        Valid when every period contains speech before its pause and the
        hints mark each utterance complete.
        """
        cuts: list[int] = []
        start = 0
        for lo, hi in self.pauses():
            c = (lo + hi) // 2
            while max_segment_ms is not None and lo - start > max_segment_ms:
                start += max_segment_ms
                cuts.append(start)
            if hi < self.length_ms and lo - start >= min_segment_ms and hi - lo >= 500:
                cuts.append(c)
                start = c
        return cuts

    def expected_segments(self, min_segment_ms: int = 1500, max_segment_ms: Optional[int] = 10000) -> list[tuple[int, int]]:
        if self.length_ms == 0:
            return []
        edges = [0] + self.expected_cuts(min_segment_ms, max_segment_ms) + [self.length_ms]
        return [(a, b - a) for a, b in zip(edges, edges[1:])]
