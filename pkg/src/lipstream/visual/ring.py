"""Frame records and the fixed-capacity, time-indexed frame ring."""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..core.types import Timestamp

RING_CAPACITY = 300
FRAME_W, FRAME_H = 640, 448


@dataclass(frozen=True)
class FaceBox:
    cx: float
    cy: float
    w: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass(frozen=True)
class FrameRecord:
    ts: Timestamp
    frame_index: int
    face_box: Optional[FaceBox] = None
    mouth_motion: float = 0.0
    landmarks: Optional[tuple] = None
    pixels: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    synced: bool = False

    def __post_init__(self):
        if self.mouth_motion < 0:
            raise ValueError("mouth_motion must be non-negative")


def frame_ts(index: int, fps: float = 30.0) -> int:
    return int(np.floor(index * 1000.0 / fps + 0.5))


class OutOfOrderFrame(ValueError):
    pass


class FrameRing:
    """Most recent ``capacity`` frames, single writer and many readers.

    Records are kept in insertion order, which is also timestamp order, so
    window queries are two binary searches over the logical sequence.
    """

    def __init__(self, capacity: int = RING_CAPACITY, frame_bytes: int = FRAME_W * FRAME_H * 3):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.frame_bytes = frame_bytes
        self._slots: list[Optional[FrameRecord]] = [None] * capacity
        self._ready: list[int] = [0] * capacity
        self._head = 0  # oldest
        self._count = 0
        self._last_ts: Optional[int] = None
        self._lock = threading.Lock()
        self.high_water_bytes = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self._count

    def _at(self, k: int) -> int:
        return (self._head + k) % self.capacity

    def insert(self, rec: FrameRecord, ready_ms: int = 0) -> Optional[FrameRecord]:
        with self._lock:
            if self._last_ts is not None and rec.ts.millis <= self._last_ts:
                raise OutOfOrderFrame(f"frame at {rec.ts.millis} ms is not after {self._last_ts} ms")
            evicted = None
            if self._count == self.capacity:
                evicted = self._slots[self._head]
                self._slots[self._head] = rec
                self._ready[self._head] = ready_ms
                self._head = (self._head + 1) % self.capacity
            else:
                slot = self._at(self._count)
                self._slots[slot] = rec
                self._ready[slot] = ready_ms
                self._count += 1
            self._last_ts = rec.ts.millis
            self.inserted += 1
            self.high_water_bytes = max(self.high_water_bytes, self._count * self.frame_bytes)
            return evicted

    def _lower(self, ts: int) -> int:
        lo, hi = 0, self._count
        while lo < hi:
            mid = (lo + hi) // 2
            if self._slots[self._at(mid)].ts.millis < ts:
                lo = mid + 1
            else:
                hi = mid
        return lo

    def window(self, lo: Timestamp | int, hi: Timestamp | int) -> list[FrameRecord]:
        lo, hi = int(lo), int(hi)
        with self._lock:
            if hi < lo:
                return []
            a, b = self._lower(lo), self._lower(hi + 1)
            return [self._slots[self._at(k)] for k in range(a, b)]

    def window_ready(self, lo: Timestamp | int, hi: Timestamp | int) -> list[tuple[FrameRecord, int]]:
        lo, hi = int(lo), int(hi)
        with self._lock:
            if hi < lo:
                return []
            a, b = self._lower(lo), self._lower(hi + 1)
            return [(self._slots[self._at(k)], self._ready[self._at(k)]) for k in range(a, b)]

    def records(self) -> list[FrameRecord]:
        with self._lock:
            return [self._slots[self._at(k)] for k in range(self._count)]


def ring_insert(ring: FrameRing, rec: FrameRecord) -> Optional[FrameRecord]:
    return ring.insert(rec)


def ring_window(ring: FrameRing, lo, hi) -> list[FrameRecord]:
    return ring.window(lo, hi)


CSV_HEADER = ["frame_index", "ts_ms", "cx", "cy", "w", "h", "mouth_motion"]


def read_frames_csv(path: str | Path) -> list[FrameRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}, got {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            try:
                box = None
                if row["cx"] not in ("", None):
                    box = FaceBox(float(row["cx"]), float(row["cy"]), float(row["w"]), float(row["h"]))
                out.append(
                    FrameRecord(Timestamp(int(row["ts_ms"])), int(row["frame_index"]), box, float(row["mouth_motion"]))
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line}: bad frame record ({exc})") from None
    return out


def write_frames_csv(path: str | Path, frames: list[FrameRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for f in frames:
            b = f.face_box
            w.writerow(
                [f.frame_index, f.ts.millis]
                + ([f"{b.cx:.3f}", f"{b.cy:.3f}", f"{b.w:.3f}", f"{b.h:.3f}"] if b else ["", "", "", ""])
                + [f"{f.mouth_motion:.6f}"]
            )
