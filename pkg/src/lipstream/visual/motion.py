"""Mouth-motion activity signal."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ring import FrameRecord


@dataclass(frozen=True)
class MotionSeries:
    frame_ts: np.ndarray  # ms, one per frame
    frame_values: np.ndarray
    grid_ts: np.ndarray  # 1 ms grid from the first to the last frame
    grid_values: np.ndarray  # zero-order hold of frame_values

    def at(self, ts_ms) -> np.ndarray:
        """Zero-order-hold lookup at arbitrary times (clamped to the series)."""
        idx = np.searchsorted(self.frame_ts, np.asarray(ts_ms), side="right") - 1
        return self.frame_values[np.clip(idx, 0, len(self.frame_values) - 1)]


def _lower_third(pixels: np.ndarray, frame: FrameRecord) -> np.ndarray:
    b = frame.face_box
    h, w = pixels.shape[:2]
    x0 = int(np.clip(round(b.cx - b.w / 2), 0, w))
    x1 = int(np.clip(round(b.cx + b.w / 2), 0, w))
    y1 = int(np.clip(round(b.cy + b.h / 2), 0, h))
    y0 = int(np.clip(round(b.cy + b.h / 2 - b.h / 3), 0, h))
    return pixels[y0:y1, x0:x1].astype(np.float64)


def mouth_motion_signal(frames: Sequence[FrameRecord], fps: float = 30.0) -> MotionSeries:
    """Per-frame mouth activity, resampled to a 1 ms grid.

    With pixel data the value is the mean absolute difference of the mouth
    region (lower third of the face box) against the previous frame, scaled
    to [0, 1]. Without pixels the frame's ``mouth_motion`` field is used.
    """
    faced = [f for f in frames if f.face_box is not None]
    if not faced:
        raise ValueError("no frames with a detected face")
    if len(faced) < 2:
        raise ValueError("mouth motion needs at least two frames with faces")
    ts = np.array([f.ts.millis for f in faced], dtype=np.int64)
    if all(f.pixels is not None for f in faced):
        vals = [0.0]
        for prev, cur in zip(faced, faced[1:]):
            a, b = _lower_third(prev.pixels, cur), _lower_third(cur.pixels, cur)
            vals.append(float(np.mean(np.abs(b - a))) / 255.0 if a.size and a.shape == b.shape else 0.0)
        values = np.array(vals)
    else:
        values = np.array([f.mouth_motion for f in faced], dtype=np.float64)
    grid = np.arange(ts[0], ts[-1] + 1)
    held = values[np.searchsorted(ts, grid, side="right") - 1]
    return MotionSeries(ts, values, grid, held)
