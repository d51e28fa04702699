"""Asynchronous translation pipeline: STT, MT and TTS workers chained by queues.

The shipped stages are deterministic mocks. Their simulated service time
comes from a :class:`StageProfile`; the work they do is small but real
(token derivation, reversal, tone synthesis) so downstream components see
plausible payloads.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Protocol

import numpy as np

from .broker import Broker, QueueConfig
from .core.clock import MediaClock
from .core.codec import pack_fields, unpack_fields
from .core.process import LATE, Process, spawn
from .core.types import AudioBuffer, Segment, SegmentId, Timestamp

log = logging.getLogger(__name__)

AUDIO_QUEUE = "audio_queue"
TEXT_QUEUE = "text_queue"
TRANSLATION_QUEUE = "translation_queue"
AUDIO_OUTPUT_QUEUE = "audio_output_queue"
LIPSYNC_QUEUE = "lipsync_queue"
VIDEO_OUTPUT_QUEUE = "video_output_queue"
ATP_QUEUES = (AUDIO_QUEUE, TEXT_QUEUE, TRANSLATION_QUEUE, AUDIO_OUTPUT_QUEUE)

STAGE_NAMES = ("stt", "mt", "tts", "lipsync", "facedetect", "sync")
TOKEN_MS = 300
ENVELOPE_HOP_MS = 10


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class StageProfile:
    """Latency model: ``fixed + per_sec * seconds + per_frame * frames``, times noise."""

    name: str
    fixed_ms: float = 0.0
    per_sec_ms: float = 0.0
    jitter_pct: float = 0.0
    seed: int = 0
    per_frame_ms: float = 0.0

    def __post_init__(self):
        if self.name not in STAGE_NAMES:
            raise ValueError(f"unknown stage {self.name!r}")
        if min(self.fixed_ms, self.per_sec_ms, self.per_frame_ms, self.jitter_pct) < 0:
            raise ValueError(f"profile {self.name!r} has a negative parameter")
        if self.jitter_pct >= 1:
            raise ValueError("jitter_pct must be below 1")

    def nominal_ms(self, duration_ms: int = 0, frames: int = 0) -> float:
        return self.fixed_ms + self.per_sec_ms * (duration_ms / 1000.0) + self.per_frame_ms * frames

    def service_ms(self, duration_ms: int = 0, frames: int = 0, factor: float = 1.0) -> int:
        return round_half_up(self.nominal_ms(duration_ms, frames) * factor)

    def rate_ms_per_s(self, fps: float = 30.0) -> float:
        """Compute per second of media, counting per-frame work at ``fps``."""
        return self.per_sec_ms + self.per_frame_ms * fps

    def with_seed(self, seed: int) -> StageProfile:
        return replace(self, seed=seed)


class Noise:
    """Sequential seeded noise factors in ``[1 - jitter, 1 + jitter]``."""

    def __init__(self, profile: StageProfile, salt: int = 0):
        self.jitter = profile.jitter_pct
        self._rng = random.Random(f"{profile.seed}:{profile.name}:{salt}")

    def factor(self) -> float:
        u = self._rng.random()
        if self.jitter == 0:
            return 1.0
        return 1.0 + self.jitter * (2.0 * u - 1.0)


# payloads ------------------------------------------------------------------


def encode_segment(seg: Segment) -> bytes:
    return pack_fields(
        {
            "type": "segment",
            "uuid": seg.id.uuid.bytes,
            "birth": seg.id.birth.millis,
            "start": seg.audio.start.millis,
            "rate": seg.audio.sample_rate,
            "samples": seg.audio.samples,
            "confidence": seg.boundary_confidence,
            "forced": seg.forced_split,
            "src": seg.lang_src,
            "dst": seg.lang_dst,
        }
    )


def _segment_id(f: dict) -> SegmentId:
    import uuid

    return SegmentId(uuid.UUID(bytes=f["uuid"]), Timestamp(f["birth"]))


def decode_segment(data: bytes) -> Segment:
    f = unpack_fields(data)
    if f.get("type") != "segment":
        raise ValueError(f"expected a segment record, got {f.get('type')!r}")
    audio = AudioBuffer(f["samples"], f["rate"], Timestamp(f["start"]))
    return Segment(_segment_id(f), audio, f["confidence"], f["forced"], f["src"], f["dst"])


@dataclass(frozen=True, eq=False)
class StageOutput:
    segment_id: SegmentId
    kind: str  # transcript | translation | synth_audio
    payload: Any  # list of tokens, or AudioBuffer
    produced_at: Timestamp
    stage_service_ms: int
    source_start: Timestamp = Timestamp(0)
    source_ms: int = 0
    envelope: Optional[np.ndarray] = None
    lang: str = ""

    def to_bytes(self) -> bytes:
        fields: dict[str, Any] = {
            "type": "stage_output",
            "uuid": self.segment_id.uuid.bytes,
            "birth": self.segment_id.birth.millis,
            "kind": self.kind,
            "produced_at": self.produced_at.millis,
            "service_ms": self.stage_service_ms,
            "source_start": self.source_start.millis,
            "source_ms": self.source_ms,
            "lang": self.lang,
            "envelope": None if self.envelope is None else np.asarray(self.envelope, dtype=np.float32),
        }
        if isinstance(self.payload, AudioBuffer):
            fields.update(
                audio_start=self.payload.start.millis,
                audio_rate=self.payload.sample_rate,
                audio=self.payload.samples,
            )
        else:
            fields["tokens"] = list(self.payload)
        return pack_fields(fields)

    @classmethod
    def from_bytes(cls, data: bytes) -> StageOutput:
        f = unpack_fields(data)
        if f.get("type") != "stage_output":
            raise ValueError(f"expected a stage output record, got {f.get('type')!r}")
        if "audio" in f:
            payload: Any = AudioBuffer(f["audio"], f["audio_rate"], Timestamp(f["audio_start"]))
        else:
            payload = f["tokens"]
        return cls(
            _segment_id(f),
            f["kind"],
            payload,
            Timestamp(f["produced_at"]),
            f["service_ms"],
            Timestamp(f["source_start"]),
            f["source_ms"],
            f["envelope"],
            f["lang"],
        )


# mock stages ---------------------------------------------------------------


def energy_envelope(audio: AudioBuffer, hop_ms: int = ENVELOPE_HOP_MS) -> np.ndarray:
    """RMS of consecutive ``hop_ms`` blocks, full scale = 1.0."""
    hop = max(1, audio.sample_rate * hop_ms // 1000)
    x = audio.as_float()
    n = int(math.ceil(len(x) / hop))
    if n == 0:
        return np.zeros(0)
    padded = np.zeros(n * hop)
    padded[: len(x)] = x
    blocks = padded.reshape(n, hop)
    counts = np.full(n, hop, dtype=np.float64)
    counts[-1] = len(x) - (n - 1) * hop
    return np.sqrt((blocks**2).sum(axis=1) / counts)


def _token(seg: SegmentId, i: int) -> str:
    h = hashlib.blake2b(seg.uuid.bytes + i.to_bytes(4, "little"), digest_size=4).hexdigest()
    return f"w{h}"


def mock_stt(seg: Segment, profile: StageProfile, factor: float = 1.0, now: Timestamp = Timestamp(0)) -> StageOutput:
    n = max(1, math.ceil(seg.duration_ms / TOKEN_MS)) if seg.duration_ms else 0
    tokens = [_token(seg.id, i) for i in range(n)]
    return StageOutput(
        seg.id,
        "transcript",
        tokens,
        now,
        profile.service_ms(seg.duration_ms, 0, factor),
        seg.start,
        seg.duration_ms,
        energy_envelope(seg.audio).astype(np.float32),
        seg.lang_src,
    )


def mock_mt(t: StageOutput, profile: StageProfile, factor: float = 1.0, now: Timestamp = Timestamp(0), lang: str = "es") -> StageOutput:
    if t.kind != "transcript":
        raise ValueError(f"mt expects a transcript, got {t.kind}")
    return StageOutput(
        t.segment_id,
        "translation",
        list(reversed(t.payload)),
        now,
        profile.service_ms(t.source_ms, 0, factor),
        t.source_start,
        t.source_ms,
        t.envelope,
        lang,
    )


def synth_tone(seg: SegmentId, duration_ms: int, envelope: Optional[np.ndarray], sample_rate: int, start: Timestamp) -> AudioBuffer:
    n = round_half_up(duration_ms * sample_rate / 1000.0)
    t = np.arange(n) / sample_rate
    carrier_hz = 100.0 * (1 + seg.uuid.int % 8)
    if envelope is not None and len(envelope):
        env = np.asarray(envelope, dtype=np.float64)
        # stretch the source envelope over the synthesized duration
        pos = (np.arange(n) + 0.5) / max(n, 1) * len(env) - 0.5
        gain = np.interp(pos, np.arange(len(env)), env)
        peak = float(env.max())
        gain = gain / peak if peak > 0 else gain
    else:
        gain = np.full(n, 0.5)
    wave = 0.5 * gain * np.sin(2 * np.pi * carrier_hz * t)
    return AudioBuffer(np.round(wave * 32767).astype(np.int16), sample_rate, start)


def mock_tts(
    t: StageOutput,
    profile: StageProfile,
    factor: float = 1.0,
    now: Timestamp = Timestamp(0),
    ratio: float = 1.0,
    sample_rate: int = 16000,
) -> StageOutput:
    if t.kind != "translation":
        raise ValueError(f"tts expects a translation, got {t.kind}")
    if ratio <= 0:
        raise ValueError("speaking-rate ratio must be positive")
    duration = round_half_up(t.source_ms * ratio)
    audio = synth_tone(t.segment_id, duration, t.envelope, sample_rate, t.source_start)
    return StageOutput(
        t.segment_id,
        "synth_audio",
        audio,
        now,
        profile.service_ms(t.source_ms, 0, factor),
        t.source_start,
        t.source_ms,
        t.envelope,
        t.lang,
    )


# workers -------------------------------------------------------------------


class Stage(Protocol):
    name: str
    profile: StageProfile

    def handle(self, payload: bytes, factor: float, now: Timestamp) -> tuple[bytes, int, int]:
        """Return ``(output payload, declared size, service ms)``."""


@dataclass
class SttStage:
    profile: StageProfile
    name: str = "stt"

    def handle(self, payload: bytes, factor: float, now: Timestamp) -> tuple[bytes, int, int]:
        out = mock_stt(decode_segment(payload), self.profile, factor, now)
        data = out.to_bytes()
        return data, len(data), out.stage_service_ms


@dataclass
class MtStage:
    profile: StageProfile
    lang: str = "es"
    name: str = "mt"

    def handle(self, payload: bytes, factor: float, now: Timestamp) -> tuple[bytes, int, int]:
        out = mock_mt(StageOutput.from_bytes(payload), self.profile, factor, now, self.lang)
        data = out.to_bytes()
        return data, len(data), out.stage_service_ms


@dataclass
class TtsStage:
    profile: StageProfile
    ratio: float = 1.0
    name: str = "tts"

    def handle(self, payload: bytes, factor: float, now: Timestamp) -> tuple[bytes, int, int]:
        out = mock_tts(StageOutput.from_bytes(payload), self.profile, factor, now, self.ratio)
        data = out.to_bytes()
        return data, len(data), out.stage_service_ms


@dataclass
class WorkerStats:
    processed: int = 0
    failures: int = 0
    busy_ms: int = 0
    services: list = field(default_factory=list)  # (segment uuid, start, service_ms)


def run_stage_worker(
    broker: Broker,
    stage: Stage,
    in_queue: str,
    out_queue: str,
    consumer: str,
    noise: Optional[Noise] = None,
    stats: Optional[WorkerStats] = None,
):
    """Service loop: consume, process, wait out the service time, publish, ack.

    A stage exception nacks the delivery and the loop moves on; the broker
    decides between redelivery and dead-lettering.
    """
    clock = broker.clock
    noise = noise or Noise(stage.profile)
    stats = stats if stats is not None else WorkerStats()
    broker.register(in_queue, consumer)
    while True:
        delivery = yield broker.consume(in_queue, consumer)
        env = delivery.envelope
        started = clock.now
        try:
            data, size, service = stage.handle(env.payload, noise.factor(), started)
        except Exception as exc:
            log.warning("%s failed on %s: %s", consumer, env.segment_id, exc)
            stats.failures += 1
            broker.nack(delivery)
            continue
        if service:
            yield service
        stats.services.append((env.segment_id.uuid, started.millis, service))
        stats.busy_ms += service
        yield broker.publish(out_queue, data, env.segment_id, size)
        broker.ack(delivery)
        stats.processed += 1


@dataclass
class DepthGauge:
    """Segments admitted to the pipeline but not yet emitted or dropped."""

    clock: MediaClock
    current: int = 0
    samples: list = field(default_factory=list)

    def enter(self) -> None:
        self.current += 1

    def leave(self) -> None:
        self.current -= 1

    def sampler(self, period_ms: int = 100, until: Optional[callable] = None):
        while True:
            yield LATE
            self.samples.append((self.clock.now_ms, self.current))
            if until is not None and until():
                return
            yield period_ms

    @property
    def time_average(self) -> float:
        return float(np.mean([v for _, v in self.samples])) if self.samples else 0.0


class TranslationPipeline:
    """Declares the ATP queues and starts one or more workers per stage."""

    def __init__(
        self,
        broker: Broker,
        profiles: dict[str, StageProfile],
        workers: Optional[dict[str, int]] = None,
        queue_config: Optional[QueueConfig] = None,
        tts_ratio: float = 1.0,
        lang_dst: str = "es",
    ):
        self.broker = broker
        base = queue_config or QueueConfig(AUDIO_QUEUE)
        for name in ATP_QUEUES:
            broker.declare(replace(base, name=name))
        stages = [
            (SttStage(profiles["stt"]), AUDIO_QUEUE, TEXT_QUEUE),
            (MtStage(profiles["mt"], lang_dst), TEXT_QUEUE, TRANSLATION_QUEUE),
            (TtsStage(profiles["tts"], tts_ratio), TRANSLATION_QUEUE, AUDIO_OUTPUT_QUEUE),
        ]
        workers = workers or {}
        self.stats: dict[str, WorkerStats] = {}
        self.processes: list[Process] = []
        for stage, qin, qout in stages:
            for k in range(workers.get(stage.name, 1)):
                cid = f"{stage.name}-{k}"
                st = WorkerStats()
                self.stats[cid] = st
                gen = run_stage_worker(broker, stage, qin, qout, cid, Noise(stage.profile, k), st)
                self.processes.append(spawn(broker.clock, gen, cid))

    def submit(self, seg: Segment):
        return self.broker.publish(AUDIO_QUEUE, encode_segment(seg), seg.id)
