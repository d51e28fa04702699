"""Synchronisation layer: join translated audio with buffered frames.

For each synthesized segment the orchestrator gathers frames around the
segment's timestamps, estimates the audio/visual lag by cross-correlating
the audio energy envelope with mouth motion, dispatches the aligned pair to
lip-sync and finally emits finished segments in birth order.
"""

from __future__ import annotations

import json
import logging
import uuid as uuidlib
from bisect import insort
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .broker import Broker, Envelope, QueueConfig
from .core.codec import pack_fields, unpack_fields
from .core.process import LATE, Event, spawn
from .core.types import AudioBuffer, SegmentId, Timestamp
from .pipeline import (
    AUDIO_OUTPUT_QUEUE,
    LIPSYNC_QUEUE,
    VIDEO_OUTPUT_QUEUE,
    DepthGauge,
    Noise,
    StageOutput,
    StageProfile,
    WorkerStats,
    energy_envelope,
    run_stage_worker,
)
from .visual.ring import FrameRecord, FrameRing
from .visual.stages import LipsyncStage, pack_frames

log = logging.getLogger(__name__)

MiB = 1 << 20
TIE_EPS = 1e-12


@dataclass(frozen=True)
class SyncConfig:
    window_ms: int = 50
    drift_limit_ms: int = 100
    frame_buffer_bytes: int = 512 * MiB
    audio_buffer_bytes: int = 128 * MiB
    retry_attempts: int = 3
    retry_base_ms: int = 100
    retry_factor: float = 2.0
    min_frames: int = 2
    drift_mode: str = "ewma"
    drift_alpha: float = 0.2
    frame_width: int = 640
    frame_height: int = 448
    envelope_hop_ms: int = 10

    def __post_init__(self):
        if self.window_ms <= 0:
            raise ValueError("window_ms must be positive")
        if self.drift_limit_ms <= self.window_ms:
            raise ValueError("drift_limit_ms must exceed window_ms")
        if self.drift_mode not in ("ewma", "raw"):
            raise ValueError(f"unknown drift mode {self.drift_mode!r}")

    @property
    def frame_bytes(self) -> int:
        return self.frame_width * self.frame_height * 3

    @property
    def ring_capacity(self) -> int:
        return max(1, min(300, self.frame_buffer_bytes // self.frame_bytes))

    def retry_delays(self) -> list[int]:
        return [int(round(self.retry_base_ms * self.retry_factor**k)) for k in range(self.retry_attempts)]


@dataclass(frozen=True, eq=False)
class AlignedPair:
    segment_id: SegmentId
    synth_audio: AudioBuffer
    frames: list
    offset_ms: int
    aligned_at: Timestamp
    low_confidence: bool = False
    score: float = 0.0


# gather --------------------------------------------------------------------


def gather_window(audio: AudioBuffer, cfg: SyncConfig, anchor_ms: int = 0) -> tuple[int, int]:
    return (audio.start.millis - cfg.window_ms + anchor_ms, audio.end.millis + cfg.window_ms + anchor_ms)


def gather(seg_audio: StageOutput | AudioBuffer, ring: FrameRing, cfg: SyncConfig = SyncConfig(), anchor_ms: int = 0) -> list[FrameRecord]:
    """Frames whose timestamps fall in the audio span widened by the sync window."""
    audio = seg_audio.payload if isinstance(seg_audio, StageOutput) else seg_audio
    lo, hi = gather_window(audio, cfg, anchor_ms)
    return ring.window(max(lo, 0), hi)


# align ---------------------------------------------------------------------


def envelope_fn(audio: AudioBuffer, hop_ms: int = 10):
    """Energy envelope as a function of media time (linear interpolation)."""
    env = energy_envelope(audio, hop_ms)
    centres = audio.start.millis + (np.arange(len(env)) + 0.5) * hop_ms
    return lambda t: np.interp(t, centres, env)


def correlation_curve(audio: AudioBuffer, frames: Sequence[FrameRecord], lags: np.ndarray, hop_ms: int = 10) -> np.ndarray:
    """Pearson correlation between mouth motion and the lagged audio envelope.

    Entry ``k`` compares ``motion(t_i)`` with ``energy(t_i - lags[k])``, so a
    positive lag means the picture trails the sound.
    """
    fn = envelope_fn(audio, hop_ms)
    t = np.array([f.ts.millis for f in frames], dtype=np.float64)
    y = np.array([f.mouth_motion for f in frames], dtype=np.float64)
    x = fn(t[None, :] - lags[:, None].astype(np.float64))
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean()
    den = np.sqrt((xc**2).sum(axis=1) * (yc**2).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (xc @ yc) / den
    return np.where(den > 0, r, np.nan)


def pick_lag(lags: np.ndarray, scores: np.ndarray) -> Optional[int]:
    """Best lag; ties go to the smallest ``|lag|`` and then to the negative one."""
    if not np.any(np.isfinite(scores)):
        return None
    best = np.nanmax(scores)
    cands = [int(l) for l, s in zip(lags, scores) if np.isfinite(s) and s >= best - TIE_EPS]
    return min(cands, key=lambda l: (abs(l), l))


def align(
    audio: AudioBuffer,
    frames: Sequence[FrameRecord],
    cfg: SyncConfig = SyncConfig(),
    aligned_at: Timestamp = Timestamp(0),
    centre_ms: int = 0,
    segment_id: Optional[SegmentId] = None,
) -> AlignedPair:
    """Estimate the A/V offset and re-timestamp the frames by ``-offset``.

    Lags are searched in ``centre_ms ± window_ms`` at 1 ms resolution. The
    returned ``offset_ms`` is the correction relative to ``centre_ms``.
    """
    if len(frames) < 2:
        raise ValueError("align needs at least two frames")
    if audio.duration_ms < 100:
        raise ValueError("align needs at least 100 ms of audio")
    lags = np.arange(centre_ms - cfg.window_ms, centre_ms + cfg.window_ms + 1)
    scores = correlation_curve(audio, frames, lags, cfg.envelope_hop_ms)
    lag = pick_lag(lags, scores)
    low = lag is None
    if low:
        lag = centre_ms
        score = 0.0
    else:
        score = float(scores[lag - lags[0]])
    # frames that would land before the stream epoch are pinned to it
    shifted = [replace(f, ts=Timestamp(max(0, f.ts.millis - lag))) for f in frames]
    return AlignedPair(segment_id, audio, shifted, lag - centre_ms, aligned_at, low, score)


# drift ---------------------------------------------------------------------


@dataclass
class DriftMonitor:
    """EWMA (or raw) drift tracker that re-anchors when the limit is exceeded."""

    limit_ms: float = 100.0
    alpha: float = 0.2
    mode: str = "ewma"
    ewma: float = 0.0
    anchor_ms: int = 0
    count: int = 0
    resyncs: list = field(default_factory=list)

    def update(self, offset_ms: float) -> Optional[dict]:
        """Feed one pair's offset (relative to the current anchor)."""
        self.count += 1
        if self.mode == "raw":
            self.ewma = float(offset_ms)
        else:
            self.ewma = self.alpha * offset_ms + (1 - self.alpha) * self.ewma
        if abs(self.ewma) > self.limit_ms:
            event = {"pair": self.count, "ewma": self.ewma, "shift_ms": int(round(offset_ms))}
            self.anchor_ms += int(round(offset_ms))
            self.ewma = 0.0
            self.resyncs.append(event)
            return event
        return None

    @property
    def centre_ms(self) -> int:
        return int(round(self.ewma))


def drift_monitor(offsets: Sequence[float], limit_ms: float = 100.0, alpha: float = 0.2, mode: str = "ewma") -> list[dict]:
    mon = DriftMonitor(limit_ms, alpha, mode)
    return [e for e in (mon.update(o) for o in offsets) if e is not None]


# event log -----------------------------------------------------------------


class EventLog:
    def __init__(self):
        self.events: list[dict] = []

    def add(self, ts_ms: int, kind: str, segment, offset_ms=None, latency_ms=None) -> dict:
        ev = {"ts_ms": int(ts_ms), "kind": kind, "segment": str(segment), "offset_ms": offset_ms, "latency_ms": latency_ms}
        self.events.append(ev)
        return ev

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    def to_ndjson(self) -> str:
        return "".join(json.dumps(e, sort_keys=False) + "\n" for e in self.events)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ndjson())


# orchestrator ----------------------------------------------------------------


@dataclass
class SegmentTrace:
    segment_id: SegmentId
    arrival: Optional[int] = None  # synth audio published
    gathered: Optional[int] = None
    dispatched: Optional[int] = None
    lipsync_done: Optional[int] = None
    emitted: Optional[int] = None
    offset_ms: Optional[int] = None
    frames: int = 0
    attempts: int = 0
    status: str = "pending"  # pending | ready | emitted | sync_failure | dead_letter

    @property
    def latency_ms(self) -> Optional[int]:
        return None if self.emitted is None else self.emitted - self.segment_id.birth.millis

    @property
    def delta_sync_ms(self) -> Optional[int]:
        if None in (self.emitted, self.arrival, self.dispatched, self.lipsync_done):
            return None
        return (self.dispatched - self.arrival) + (self.emitted - self.lipsync_done)


class Orchestrator:
    def __init__(
        self,
        broker: Broker,
        ring: FrameRing,
        cfg: SyncConfig = SyncConfig(),
        sync_profile: Optional[StageProfile] = None,
        lipsync_profile: Optional[StageProfile] = None,
        depth: Optional[DepthGauge] = None,
        lipsync_workers: int = 1,
        queue_config: Optional[QueueConfig] = None,
        events: Optional[EventLog] = None,
    ):
        from .visual.stages import WAV2LIP_TRT_FP16

        self.broker = broker
        self.clock = broker.clock
        self.ring = ring
        self.cfg = cfg
        self.sync_profile = sync_profile or StageProfile("sync")
        self.lipsync_profile = lipsync_profile or WAV2LIP_TRT_FP16
        self.depth = depth or DepthGauge(self.clock)
        self.events = events or EventLog()
        self.monitor = DriftMonitor(cfg.drift_limit_ms, cfg.drift_alpha, cfg.drift_mode)
        self.traces: dict = {}
        self._order: list[tuple[int, int, object]] = []  # (birth, seq, uuid) of unsettled segments
        self._seq = 0
        self._ready: set = set()
        self._dropped: set = set()
        self._pending_audio: dict = {}
        self.audio_high_water = 0
        self.pairs: list[AlignedPair] = []
        self.finished = Event(self.clock)
        self._input_closed = False
        self.lipsync_stats: dict[str, WorkerStats] = {}
        base = queue_config or QueueConfig(LIPSYNC_QUEUE)
        for name in (AUDIO_OUTPUT_QUEUE, LIPSYNC_QUEUE, VIDEO_OUTPUT_QUEUE):
            broker.declare(replace(base, name=name))
        broker.on_dead_letter(self._on_dead_letter)
        self._noise = Noise(self.sync_profile)
        spawn(self.clock, self._gatherer(), "orchestrator-gather")
        stage = LipsyncStage(self.lipsync_profile, cfg.frame_bytes, cfg.window_ms)
        for k in range(lipsync_workers):
            cid = f"lipsync-{k}"
            st = WorkerStats()
            self.lipsync_stats[cid] = st
            spawn(self.clock, run_stage_worker(broker, stage, LIPSYNC_QUEUE, VIDEO_OUTPUT_QUEUE, cid, Noise(self.lipsync_profile, k), st), cid)
        spawn(self.clock, self._emitter(), "orchestrator-emit")

    # bookkeeping

    def expect(self, seg: SegmentId) -> None:
        """Register a segment entering the pipeline; emission follows birth order."""
        self.traces[seg.uuid] = SegmentTrace(seg)
        insort(self._order, (seg.birth.millis, self._seq, seg.uuid))
        self._seq += 1
        self.depth.enter()

    def close_input(self) -> None:
        self._input_closed = True
        self._release()

    def _drop(self, uid, kind: str) -> None:
        tr = self.traces.get(uid)
        if tr is None or tr.status in ("emitted", "sync_failure", "dead_letter"):
            return
        tr.status = kind
        self._dropped.add(uid)
        self._pending_audio.pop(uid, None)
        self.depth.leave()
        self.events.add(self.clock.now_ms, kind, uid)
        self._release()

    def _on_dead_letter(self, queue: str, env: Envelope) -> None:
        self._drop(env.segment_id.uuid, "dead_letter")

    def _release(self) -> None:
        while self._order:
            _, _, uid = self._order[0]
            if uid in self._dropped:
                self._order.pop(0)
                continue
            if uid not in self._ready:
                break
            self._order.pop(0)
            tr = self.traces[uid]
            tr.emitted = self.clock.now_ms
            tr.status = "emitted"
            self._pending_audio.pop(uid, None)
            self.depth.leave()
            self.events.add(tr.emitted, "aligned", uid, tr.offset_ms, tr.latency_ms)
        if self._input_closed and not self._order and not self.finished.triggered:
            self.finished.succeed(self.clock.now_ms)

    def _admit_audio(self, uid, nbytes: int) -> None:
        self._pending_audio[uid] = nbytes
        while sum(self._pending_audio.values()) > self.cfg.audio_buffer_bytes:
            oldest = min(self._pending_audio, key=lambda u: self.traces[u].segment_id.birth.millis if u in self.traces else -1)
            self._pending_audio.pop(oldest)
            self._drop(oldest, "dead_letter")
        self.audio_high_water = max(self.audio_high_water, sum(self._pending_audio.values()))

    # processes

    def _gatherer(self):
        b, cfg = self.broker, self.cfg
        b.register(AUDIO_OUTPUT_QUEUE, "orchestrator")
        while True:
            d = yield b.consume(AUDIO_OUTPUT_QUEUE, "orchestrator")
            out = StageOutput.from_bytes(d.envelope.payload)
            uid = out.segment_id.uuid
            tr = self.traces.setdefault(uid, SegmentTrace(out.segment_id))
            tr.arrival = d.envelope.published_at.millis
            if tr.status != "pending":
                b.ack(d)
                continue
            self._admit_audio(uid, out.payload.nbytes)
            if tr.status != "pending":  # evicted by the audio cap
                b.ack(d)
                continue
            delays = cfg.retry_delays()
            frames: list = []
            for attempt in range(len(delays) + 1):
                yield LATE
                tr.attempts = attempt + 1
                frames = gather(out, self.ring, cfg, self.monitor.anchor_ms)
                if len(frames) >= cfg.min_frames:
                    break
                if attempt < len(delays):
                    yield delays[attempt]
            else:
                tr.status = "sync_failure"
                self._dropped.add(uid)
                self._pending_audio.pop(uid, None)
                self.depth.leave()
                self.events.add(self.clock.now_ms, "sync_failure", uid)
                b.reject(d)
                self._release()
                continue
            tr.gathered = self.clock.now_ms
            local = [replace(f, ts=Timestamp(f.ts.millis - self.monitor.anchor_ms)) for f in frames if f.ts.millis >= self.monitor.anchor_ms]
            pair = align(out.payload, local if len(local) >= 2 else frames, cfg, self.clock.now, self.monitor.centre_ms, out.segment_id)
            total = pair.offset_ms + self.monitor.centre_ms
            resync = self.monitor.update(total)
            if resync is not None:
                self.events.add(self.clock.now_ms, "resync", uid, resync["shift_ms"], None)
            self.pairs.append(pair)
            tr.offset_ms = total
            tr.frames = len(frames)
            service = self.sync_profile.service_ms(out.payload.duration_ms, len(frames), self._noise.factor())
            if service:
                yield service
            fields = {
                "type": "aligned_pair",
                "uuid": uid.bytes,
                "birth": out.segment_id.birth.millis,
                "audio_start": out.payload.start.millis,
                "audio_rate": out.payload.sample_rate,
                "audio": out.payload.samples,
                "offset_ms": total,
                "aligned_at": self.clock.now_ms,
            }
            fields.update(pack_frames(pair.frames))
            payload = pack_fields(fields)
            size = len(payload) + len(frames) * cfg.frame_bytes
            yield b.publish(LIPSYNC_QUEUE, payload, out.segment_id, size)
            tr.dispatched = self.clock.now_ms
            b.ack(d)

    def _emitter(self):
        b = self.broker
        b.register(VIDEO_OUTPUT_QUEUE, "orchestrator")
        while True:
            d = yield b.consume(VIDEO_OUTPUT_QUEUE, "orchestrator")
            f = unpack_fields(d.envelope.payload)
            uid = uuidlib.UUID(bytes=f["uuid"])
            tr = self.traces.get(uid)
            b.ack(d)
            if tr is None or tr.status != "pending":
                continue
            tr.lipsync_done = d.envelope.published_at.millis
            tr.status = "ready"
            self._ready.add(uid)
            self._release()

    # summaries

    def emitted(self) -> list[SegmentTrace]:
        return sorted((t for t in self.traces.values() if t.status == "emitted"), key=lambda t: t.emitted)
