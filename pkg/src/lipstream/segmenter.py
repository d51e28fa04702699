"""Energy VAD and semantic-aware segmentation.

Pauses found by the VAD are only candidate boundaries. A boundary scorer
decides whether the speech before the pause is complete enough to cut;
otherwise audio keeps accumulating until the next pause or the forced split
at ``max_segment_ms``.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .core.types import AudioBuffer, MediaError, Segment, SegmentId, Timestamp

FLOOR_DB = -120.0
TERMINAL = (".", "?", "!", "…")


@dataclass(frozen=True)
class VadConfig:
    silence_ms: int = 500
    energy_floor_db: float = -35.0
    min_segment_ms: int = 1500
    max_segment_ms: Optional[int] = 10000
    frame_ms: int = 20
    peak_half_life_ms: Optional[int] = 10000
    reference: str = "running"  # or "absolute" (dBFS)

    def __post_init__(self):
        if self.frame_ms <= 0:
            raise ValueError("frame_ms must be positive")
        if self.silence_ms % self.frame_ms:
            raise ValueError("silence_ms must be a whole number of frames")
        if self.max_segment_ms is not None and self.min_segment_ms >= self.max_segment_ms:
            raise ValueError("min_segment_ms must be below max_segment_ms")
        if self.reference not in ("running", "absolute"):
            raise ValueError(f"unknown energy reference {self.reference!r}")

    @classmethod
    def baseline(cls, **kw) -> VadConfig:
        """Plain VAD cutting: 500 ms of silence, no length limits."""
        kw.setdefault("min_segment_ms", 0)
        kw.setdefault("max_segment_ms", None)
        return cls(**kw)


@dataclass(frozen=True)
class BoundaryScore:
    confidence: float
    threshold: float = 0.85

    @property
    def complete(self) -> bool:
        return self.confidence >= self.threshold


Scorer = Callable[[Optional[str], int], BoundaryScore]
HintProvider = Callable[[int, int], Optional[str]]


def heuristic_boundary_scorer(hint: Optional[str], accumulated_ms: int, threshold: float = 0.85) -> BoundaryScore:
    if hint and hint.rstrip().endswith(TERMINAL):
        return BoundaryScore(0.95, threshold)
    if accumulated_ms >= 6000:
        return BoundaryScore(0.90, threshold)
    return BoundaryScore(0.50, threshold)


def always_complete(hint: Optional[str], accumulated_ms: int) -> BoundaryScore:
    return BoundaryScore(1.0)


@dataclass(frozen=True)
class VadFrame:
    frame_index: int
    rms_db: float
    is_speech: bool


class _Vad:
    """Frame-by-frame energy classifier with a decaying running peak."""

    def __init__(self, cfg: VadConfig, sample_rate: int):
        self.cfg = cfg
        self.frame_len = cfg.frame_ms * sample_rate // 1000
        if self.frame_len <= 0:
            raise ValueError("frame_ms too small for the sample rate")
        if cfg.peak_half_life_ms:
            self.decay = 0.5 ** (cfg.frame_ms / cfg.peak_half_life_ms)
        else:
            self.decay = 1.0
        self.peak = 0.0
        self.index = 0

    def classify(self, frame: np.ndarray) -> VadFrame:
        x = frame.astype(np.float64)
        rms = math.sqrt(float(np.mean(x * x))) if len(x) else 0.0
        if self.cfg.reference == "absolute":
            ref = 32768.0
        else:
            self.peak = max(self.peak * self.decay, float(np.max(np.abs(x))) if len(x) else 0.0)
            ref = self.peak
        if rms <= 0.0 or ref <= 0.0:
            db = FLOOR_DB
        else:
            db = max(FLOOR_DB, 20.0 * math.log10(rms / ref))
        out = VadFrame(self.index, db, db > self.cfg.energy_floor_db)
        self.index += 1
        return out


def vad_frames(audio: AudioBuffer, cfg: VadConfig = VadConfig()) -> list[VadFrame]:
    if len(audio) == 0:
        raise MediaError("cannot run VAD on empty audio")
    vad = _Vad(cfg, audio.sample_rate)
    n = vad.frame_len
    return [vad.classify(audio.samples[i : i + n]) for i in range(0, len(audio), n)]


@dataclass
class ScorerStats:
    """Wall-clock cost of boundary scoring, kept apart from media time."""

    calls: int = 0
    total_s: float = 0.0
    max_s: float = 0.0

    def add(self, seconds: float) -> None:
        self.calls += 1
        self.total_s += seconds
        self.max_s = max(self.max_s, seconds)

    @property
    def mean_ms(self) -> float:
        return 1000.0 * self.total_s / self.calls if self.calls else 0.0


@dataclass
class Segmenter:
    """Streaming segmenter for one input stream.

    Feed contiguous audio with :meth:`feed`; call :meth:`flush` at end of
    stream. Both return the segments completed so far.
    """

    cfg: VadConfig = field(default_factory=VadConfig)
    scorer: Scorer = heuristic_boundary_scorer
    hint_provider: Optional[HintProvider] = None
    seed: int = 0
    lang_src: str = "en"
    lang_dst: str = "es"

    def __post_init__(self):
        self.stats = ScorerStats()
        self.frames: list[VadFrame] = []
        self._rng = random.Random(self.seed)
        self._vad: Optional[_Vad] = None
        self._rate: Optional[int] = None
        self._origin: Optional[Timestamp] = None
        self._buf = np.zeros(0, dtype=np.int16)  # samples from _seg_start onward
        self._seg_start = 0  # absolute sample index
        self._pos = 0  # next unclassified sample
        self._total = 0
        self._silence_from: Optional[int] = None
        self._had_speech = False
        self._consulted = False
        self._pending: Optional[BoundaryScore] = None
        self._emitted = 0

    # helpers

    def _ms(self, samples: int) -> int:
        return int(math.floor(1000 * samples / self._rate + 0.5))

    def _samples(self, ms: int) -> int:
        return ms * self._rate // 1000

    def _cut(self, at: int, confidence: float, forced: bool) -> Segment:
        n = at - self._seg_start
        chunk = self._buf[:n]
        self._buf = self._buf[n:]
        start = self._origin + self._ms(self._seg_start)
        audio = AudioBuffer(chunk, self._rate, start)
        seg = Segment(
            SegmentId.from_rng(self._rng, start),
            audio,
            boundary_confidence=float(confidence),
            forced_split=forced,
            lang_src=self.lang_src,
            lang_dst=self.lang_dst,
        )
        self._seg_start = at
        self._consulted = False
        self._pending = None
        self._emitted += 1
        return seg

    def _consult(self, pause_at: int) -> BoundaryScore:
        acc_ms = self._ms(pause_at - self._seg_start)
        hint = None
        if self.hint_provider is not None:
            hint = self.hint_provider(self._ms(self._seg_start), self._ms(pause_at))
        t0 = time.perf_counter()
        score = self.scorer(hint, acc_ms)
        self.stats.add(time.perf_counter() - t0)
        return score

    # streaming API

    def feed(self, audio: AudioBuffer) -> list[Segment]:
        if self._rate is None:
            self._rate = audio.sample_rate
            self._origin = audio.start
            self._vad = _Vad(self.cfg, audio.sample_rate)
        elif audio.sample_rate != self._rate:
            raise MediaError(f"sample-rate change mid-stream: {self._rate} -> {audio.sample_rate}")
        self._buf = np.concatenate([self._buf, audio.samples])
        self._total += len(audio)
        return self._scan(final=False)

    def flush(self) -> list[Segment]:
        out = self._scan(final=True)
        remainder = self._total - self._seg_start
        if remainder > 0 and (self._had_speech or self._pending is not None or self._emitted):
            if self._pending is not None:
                conf = self._pending.confidence
            else:
                conf = self._consult(self._total).confidence
            out.append(self._cut(self._total, conf, False))
        return out

    def _scan(self, final: bool) -> list[Segment]:
        out: list[Segment] = []
        flen = self._vad.frame_len
        cfg = self.cfg
        max_n = self._samples(cfg.max_segment_ms) if cfg.max_segment_ms else None
        while self._total - self._pos >= flen or (final and self._pos < self._total):
            a = self._pos
            b = min(a + flen, self._total)
            rel = a - self._seg_start
            vf = self._vad.classify(self._buf[rel : rel + (b - a)])
            self.frames.append(vf)
            self._pos = b
            if vf.is_speech:
                if self._pending is not None:
                    mid = (self._silence_from + a) // 2
                    out.append(self._cut(mid, self._pending.confidence, False))
                self._silence_from = None
                self._had_speech = True
            else:
                if self._silence_from is None:
                    self._silence_from = max(a, self._seg_start)
                run_ms = self._ms(b - self._silence_from)
                if (
                    not self._consulted
                    and self._had_speech
                    and run_ms >= cfg.silence_ms
                    and self._ms(self._silence_from - self._seg_start) >= cfg.min_segment_ms
                ):
                    self._consulted = True
                    score = self._consult(self._silence_from)
                    if score.complete:
                        self._pending = score
            if max_n is not None and b - self._seg_start >= max_n:
                out.append(self._cut(self._seg_start + max_n, 1.0, True))
                self._had_speech = vf.is_speech
                if self._silence_from is not None:
                    self._silence_from = max(self._silence_from, self._seg_start)
            if vf.is_speech:
                self._consulted = False
        return out


def segment_stream(
    audio: AudioBuffer | Iterable[AudioBuffer],
    cfg: VadConfig = VadConfig(),
    scorer: Scorer = heuristic_boundary_scorer,
    hint_provider: Optional[HintProvider] = None,
    seed: int = 0,
) -> list[Segment]:
    seg = Segmenter(cfg, scorer, hint_provider, seed)
    chunks = [audio] if isinstance(audio, AudioBuffer) else audio
    out: list[Segment] = []
    for chunk in chunks:
        out.extend(seg.feed(chunk))
    out.extend(seg.flush())
    return out
