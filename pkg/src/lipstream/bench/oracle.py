"""Discrete-event oracle for clip latency.

This is an independent re-derivation of the system's timing from stage
profiles and queue discipline only: no broker, no workers, no clock. It
assumes one worker per stage, in-order queues and no re-anchoring of the
sync window, which holds for every jitter-free scenario the harness runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence


def _svc(profile, duration_ms: int = 0, frames: int = 0) -> int:
    x = profile.fixed_ms + profile.per_sec_ms * (duration_ms / 1000.0) + profile.per_frame_ms * frames
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class OracleInput:
    segments: Sequence[tuple[int, int]]  # (start_ms, duration_ms) in birth order
    frame_ts: Sequence[int]
    profiles: dict
    baseline_lipsync: Optional[object] = None
    overhead_ms: dict = field(default_factory=lambda: {"baseline": 0, "pipeline": 0})
    window_ms: int = 50
    retry_delays: Sequence[int] = (100, 200, 400)
    min_frames: int = 2
    ring_capacity: int = 300
    tts_ratio: float = 1.0


@dataclass
class OracleResult:
    latency_ms: int
    emissions: list  # per segment: emission (or settle) time
    failed: list  # indices of segments that hit a sync failure


def simulate_baseline(inp: OracleInput) -> OracleResult:
    p = inp.profiles
    ls = inp.baseline_lipsync or p["lipsync"]
    t = inp.overhead_ms.get("baseline", 0)
    emissions = []
    for start, dur in inp.segments:
        n = sum(1 for ts in inp.frame_ts if start <= ts < start + dur)
        t += _svc(p["stt"], dur) + _svc(p["mt"], dur) + _svc(p["tts"], dur)
        t += n * _svc(p["facedetect"], 0, 1)
        t += _svc(ls, 0, n)
        emissions.append(t)
    return OracleResult(t, emissions, [])


def simulate_pipeline(inp: OracleInput) -> OracleResult:
    p = inp.profiles
    c0 = inp.overhead_ms.get("pipeline", 0)
    if not inp.segments:
        return OracleResult(c0, [], [])
    # visual branch: every frame available at c0, detected one after another
    ready, t = [], c0
    per_frame = _svc(p["facedetect"], 0, 1)
    for _ in inp.frame_ts:
        t += per_frame
        ready.append(t)

    def frames_at(a: int, lo: int, hi: int) -> int:
        inserted = sum(1 for r in ready if r <= a)
        oldest = max(0, inserted - inp.ring_capacity)
        return sum(1 for i in range(oldest, inserted) if lo <= inp.frame_ts[i] <= hi)

    free = {"stt": c0, "mt": c0, "tts": c0, "orch": c0, "lipsync": c0}
    emissions, failed = [], []
    last = c0
    for j, (start, dur) in enumerate(inp.segments):
        t_stt = max(c0, free["stt"]) + _svc(p["stt"], dur)
        free["stt"] = t_stt
        t_mt = max(t_stt, free["mt"]) + _svc(p["mt"], dur)
        free["mt"] = t_mt
        t_tts = max(t_mt, free["tts"]) + _svc(p["tts"], dur)
        free["tts"] = t_tts
        synth_ms = int(math.floor(dur * inp.tts_ratio + 0.5))
        lo, hi = max(0, start - inp.window_ms), start + synth_ms + inp.window_ms
        a = max(t_tts, free["orch"])
        n = frames_at(a, lo, hi)
        for delay in inp.retry_delays:
            if n >= inp.min_frames:
                break
            a += delay
            n = frames_at(a, lo, hi)
        if n < inp.min_frames:
            free["orch"] = a
            failed.append(j)
            last = max(last, a)
            emissions.append(last)
            continue
        dispatch = a + _svc(p["sync"], synth_ms, n)
        free["orch"] = dispatch
        done = max(dispatch, free["lipsync"]) + _svc(p["lipsync"], 0, n)
        free["lipsync"] = done
        last = max(last, done)
        emissions.append(last)
    return OracleResult(last, emissions, failed)


def oracle_simulate(inp: OracleInput, mode: str = "pipeline") -> OracleResult:
    if mode == "baseline":
        return simulate_baseline(inp)
    if mode == "pipeline":
        return simulate_pipeline(inp)
    raise ValueError(f"unknown mode {mode!r}")
