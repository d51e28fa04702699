"""Full-system runs of one clip: the sequential baseline and the parallel pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .broker import Broker, QueueConfig
from .core.clock import MediaClock
from .core.process import spawn
from .core.types import AudioBuffer, Segment
from .orchestrator import EventLog, Orchestrator, SyncConfig
from .pipeline import (
    ATP_QUEUES,
    DepthGauge,
    Noise,
    StageProfile,
    TranslationPipeline,
    encode_segment,
    mock_mt,
    mock_stt,
    mock_tts,
)
from .segmenter import Segmenter, VadConfig, always_complete, heuristic_boundary_scorer
from .visual.mel import mel_spectrogram
from .visual.ring import FrameRecord, FrameRing
from .visual.stages import VisualBranch, mock_face_detect, mock_lipsync


@dataclass
class ClipInput:
    """Audio plus frame records for one clip, with an optional hint source."""

    audio: AudioBuffer
    frames: Sequence[FrameRecord]
    hint: Optional[object] = None  # callable(start_ms, end_ms) -> str | None
    fps: float = 30.0

    @classmethod
    def from_synthetic(cls, clip) -> ClipInput:
        return cls(clip.audio, clip.frames, clip.hint, clip.fps)


@dataclass
class SystemConfig:
    profiles: dict  # stage name -> StageProfile (stt, mt, tts, facedetect, lipsync, sync)
    baseline_lipsync: Optional[StageProfile] = None
    vad: VadConfig = field(default_factory=VadConfig)
    sync: SyncConfig = field(default_factory=SyncConfig)
    queue: QueueConfig = field(default_factory=lambda: QueueConfig("audio_queue"))
    overhead_ms: dict = field(default_factory=lambda: {"baseline": 0, "pipeline": 0})
    boundary_threshold: float = 0.85
    workers: dict = field(default_factory=dict)
    tts_ratio: float = 1.0
    depth_period_ms: int = 100

    def reseeded(self, seed: int) -> SystemConfig:
        return replace(self, profiles={k: p.with_seed(seed) for k, p in self.profiles.items()},
                       baseline_lipsync=None if self.baseline_lipsync is None else self.baseline_lipsync.with_seed(seed))


@dataclass
class RunResult:
    mode: str
    latency_ms: int
    segments: list  # per segment dicts
    events: EventLog
    depth_samples: list = field(default_factory=list)
    queue_high_water: dict = field(default_factory=dict)
    frame_high_water: int = 0
    audio_high_water: int = 0
    scorer_calls: int = 0
    scorer_mean_ms: float = 0.0

    @property
    def depth_average(self) -> float:
        return float(np.mean([v for _, v in self.depth_samples])) if self.depth_samples else 0.0

    @property
    def sync_failures(self) -> int:
        return len(self.events.of_kind("sync_failure"))

    @property
    def peak_memory_bytes(self) -> int:
        return sum(self.queue_high_water.values()) + self.frame_high_water + self.audio_high_water


def _segment(clip: ClipInput, vad: VadConfig, scorer, seed: int) -> tuple[list[Segment], Segmenter]:
    seg = Segmenter(vad, scorer, clip.hint, seed)
    out = seg.feed(clip.audio) if len(clip.audio) else []
    out += seg.flush() if len(clip.audio) else []
    return out, seg


def run_pipeline(clip: ClipInput, cfg: SystemConfig, seed: int = 0, clock: Optional[MediaClock] = None) -> RunResult:
    """Segmenter -> broker -> STT/MT/TTS workers, in parallel with the visual branch -> orchestrator."""
    clock = clock or MediaClock("virtual")
    p = cfg.profiles
    broker = Broker(clock)
    ring = FrameRing(cfg.sync.ring_capacity, cfg.sync.frame_bytes)
    depth = DepthGauge(clock)
    events = EventLog()
    pipe = TranslationPipeline(broker, p, cfg.workers, cfg.queue, cfg.tts_ratio)
    orch = Orchestrator(broker, ring, cfg.sync, p.get("sync"), p["lipsync"], depth,
                        cfg.workers.get("lipsync", 1), cfg.queue, events)
    start = clock.now_ms
    overhead = cfg.overhead_ms.get("pipeline", 0)
    scorer = lambda hint, acc: heuristic_boundary_scorer(hint, acc, cfg.boundary_threshold)
    segmenter_box: list = []

    def ingest():
        if overhead:
            yield overhead
        segments, seg = _segment(clip, cfg.vad, scorer, seed)
        segmenter_box.append(seg)
        for s in segments:
            orch.expect(s.id)
            yield broker.publish("audio_queue", encode_segment(s), s.id)
        orch.close_input()

    visual = VisualBranch(ring, p["facedetect"], seed)

    def visual_proc():
        if overhead:
            yield overhead
        t0 = clock.now_ms
        yield from visual.process(clock, clip.frames, [t0] * len(clip.frames))

    spawn(clock, ingest(), "ingest")
    spawn(clock, visual_proc(), "visual")
    spawn(clock, depth.sampler(cfg.depth_period_ms, lambda: orch.finished.triggered), "depth")
    clock.run()
    if not orch.finished.triggered:
        raise RuntimeError("pipeline run stalled before every segment settled")
    end = orch.finished.value
    segs = []
    for tr in sorted(orch.traces.values(), key=lambda t: t.segment_id.birth.millis):
        segs.append(
            {
                "segment": str(tr.segment_id.uuid),
                "birth_ms": tr.segment_id.birth.millis,
                "status": tr.status,
                "arrival_ms": tr.arrival,
                "dispatched_ms": tr.dispatched,
                "lipsync_done_ms": tr.lipsync_done,
                "emitted_ms": tr.emitted,
                "latency_ms": tr.latency_ms,
                "delta_sync_ms": tr.delta_sync_ms,
                "offset_ms": tr.offset_ms,
                "frames": tr.frames,
            }
        )
    hw = {q: broker.high_water(q) for q in broker.queues() if not q.endswith(".dlq")}
    seg = segmenter_box[0] if segmenter_box else None
    return RunResult(
        "pipeline",
        end - start,
        segs,
        events,
        depth.samples,
        hw,
        ring.high_water_bytes,
        orch.audio_high_water,
        seg.stats.calls if seg else 0,
        seg.stats.mean_ms if seg else 0.0,
    )


def run_baseline(clip: ClipInput, cfg: SystemConfig, seed: int = 0, clock: Optional[MediaClock] = None) -> RunResult:
    """Fixed 500 ms VAD cuts, then every stage strictly in sequence, one segment at a time."""
    clock = clock or MediaClock("virtual")
    p = cfg.profiles
    lipsync = cfg.baseline_lipsync or p["lipsync"]
    noise = {name: Noise(prof) for name, prof in p.items()}
    noise["lipsync"] = Noise(lipsync)
    events = EventLog()
    vad = VadConfig.baseline(silence_ms=cfg.vad.silence_ms, energy_floor_db=cfg.vad.energy_floor_db, frame_ms=cfg.vad.frame_ms)
    segments, seg = _segment(clip, vad, always_complete, seed)
    start = clock.now_ms
    rows: list = []
    frames = list(clip.frames)
    frame_ts = np.array([f.ts.millis for f in frames], dtype=np.int64)

    def serial():
        overhead = cfg.overhead_ms.get("baseline", 0)
        if overhead:
            yield overhead
        for s in segments:
            t = mock_stt(s, p["stt"], noise["stt"].factor(), clock.now)
            yield t.stage_service_ms
            m = mock_mt(t, p["mt"], noise["mt"].factor(), clock.now, s.lang_dst)
            yield m.stage_service_ms
            a = mock_tts(m, p["tts"], noise["tts"].factor(), clock.now, cfg.tts_ratio)
            yield a.stage_service_ms
            lo, hi = np.searchsorted(frame_ts, [s.start.millis, s.end.millis])
            detected = []
            for f in frames[lo:hi]:
                service = p["facedetect"].service_ms(0, 1, noise["facedetect"].factor())
                if service:
                    yield service
                detected.append(mock_face_detect(f, seed))
            if len(a.payload) >= 1024:
                _, service = mock_lipsync(detected, mel_spectrogram(a.payload), lipsync, noise["lipsync"].factor())
            else:
                service = lipsync.service_ms(0, len(detected), noise["lipsync"].factor())
            if service:
                yield service
            latency = clock.now_ms - s.id.birth.millis
            events.add(clock.now_ms, "aligned", s.id.uuid, 0, latency)
            rows.append(
                {
                    "segment": str(s.id.uuid),
                    "birth_ms": s.id.birth.millis,
                    "status": "emitted",
                    "emitted_ms": clock.now_ms,
                    "latency_ms": latency,
                    "frames": len(detected),
                }
            )

    spawn(clock, serial(), "baseline")
    clock.run()
    return RunResult("baseline", clock.now_ms - start, rows, events, scorer_calls=seg.stats.calls)
