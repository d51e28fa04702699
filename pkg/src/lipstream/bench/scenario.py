"""Benchmark scenarios, including the calibrated ``paper-table3`` preset."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from ..broker import QueueConfig
from ..orchestrator import SyncConfig
from ..pipeline import StageProfile
from ..segmenter import VadConfig
from ..session import SystemConfig
from ..visual.stages import WAV2LIP_FP32, WAV2LIP_TRT_FP16

# Per-stage cost fitted to the latency table (see the decisions notes):
# per_sec in ms of compute per second of audio, per_frame in ms per video frame.
TABLE3_PROFILES = {
    "stt": StageProfile("stt", per_sec_ms=560, jitter_pct=0.03),
    "mt": StageProfile("mt", per_sec_ms=695, jitter_pct=0.03),
    "tts": StageProfile("tts", per_sec_ms=700, jitter_pct=0.03),
    "facedetect": StageProfile("facedetect", per_frame_ms=29, jitter_pct=0.03),
    "lipsync": replace(WAV2LIP_TRT_FP16, jitter_pct=0.03),
    "sync": StageProfile("sync", fixed_ms=4, jitter_pct=0.03),
}
TABLE3_BASELINE_LIPSYNC = replace(WAV2LIP_FP32, jitter_pct=0.03)
TABLE3_OVERHEAD = {"baseline": 1600, "pipeline": 140}

# Reference cells from the latency table (seconds).
TABLE3_BASELINE_S = {1: 4.8, 3: 10.1, 5: 15.7, 8: 24.3}
TABLE3_PIPELINE_S = {1: 2.1, 3: 4.9, 5: 6.2, 8: 7.9}
TABLE3_SPEEDUP = {1: 2.3, 3: 2.1, 5: 2.5, 8: 3.1}


@dataclass(frozen=True)
class Scenario:
    name: str
    clip_lengths_s: tuple = (1, 3, 5, 8)
    profiles: dict = field(default_factory=lambda: dict(TABLE3_PROFILES))
    baseline_lipsync: Optional[StageProfile] = TABLE3_BASELINE_LIPSYNC
    repetitions: int = 10
    seed: int = 0
    mode: str = "both"
    clip_overhead_ms: dict = field(default_factory=lambda: dict(TABLE3_OVERHEAD))
    period_ms: int = 2000
    pause_ms: int = 600
    fps: float = 30.0
    vad: VadConfig = field(default_factory=VadConfig)
    sync: SyncConfig = field(default_factory=SyncConfig)
    boundary_threshold: float = 0.85
    queue: QueueConfig = field(default_factory=lambda: QueueConfig("audio_queue"))

    def __post_init__(self):
        if self.mode not in ("baseline", "pipeline", "both"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def modes(self) -> list[str]:
        return ["baseline", "pipeline"] if self.mode == "both" else [self.mode]

    def jitter_free(self) -> Scenario:
        return replace(
            self,
            profiles={k: replace(p, jitter_pct=0.0) for k, p in self.profiles.items()},
            baseline_lipsync=None if self.baseline_lipsync is None else replace(self.baseline_lipsync, jitter_pct=0.0),
        )

    def system(self, rep: int = 0) -> SystemConfig:
        seed = self.seed * 1000 + rep
        cfg = SystemConfig(
            dict(self.profiles),
            self.baseline_lipsync,
            self.vad,
            self.sync,
            self.queue,
            overhead_ms=dict(self.clip_overhead_ms),
            boundary_threshold=self.boundary_threshold,
        )
        return cfg.reseeded(seed)

    def rate_ms_per_s(self, stage: str, mode: str = "pipeline") -> float:
        p = self.profiles[stage]
        if stage == "lipsync" and mode == "baseline" and self.baseline_lipsync is not None:
            p = self.baseline_lipsync
        return p.rate_ms_per_s(self.fps)

    def serial_rate_ms_per_s(self) -> float:
        """Sum of per-second costs over the stages the baseline runs in sequence."""
        return sum(self.rate_ms_per_s(s, "baseline") for s in ("stt", "mt", "tts", "facedetect", "lipsync"))

    def max_rate_ms_per_s(self) -> float:
        return max(self.rate_ms_per_s(s) for s in ("stt", "mt", "tts", "facedetect", "lipsync"))


def paper_table3(**kw) -> Scenario:
    return Scenario("paper-table3", **kw)


def uniform_scaling(**kw) -> Scenario:
    """Every segment exactly 2 s, so jitter-free latency is exactly linear in clip length.

    Clips start at 4 s: a lone 2 s segment has no following frames inside
    its sync window, so it would sit one frame off the line.
    """
    kw.setdefault("clip_lengths_s", (4, 6, 8, 10, 12))
    return Scenario("uniform-2s", **kw).jitter_free()


def equal_cost(c: float = 500.0, **kw) -> Scenario:
    """Four serial stages of equal cost; long-clip speedup approaches 4."""
    profiles = {
        "stt": StageProfile("stt", per_sec_ms=c),
        "mt": StageProfile("mt", per_sec_ms=c),
        "tts": StageProfile("tts", per_sec_ms=c),
        "facedetect": StageProfile("facedetect", per_frame_ms=c / 30.0 / 4),
        "lipsync": StageProfile("lipsync", per_frame_ms=c / 30.0),
        "sync": StageProfile("sync", fixed_ms=0),
    }
    kw.setdefault("clip_lengths_s", (2, 8, 20, 40))
    kw.setdefault("clip_overhead_ms", {"baseline": 0, "pipeline": 0})
    return Scenario("equal-cost", profiles=profiles, baseline_lipsync=profiles["lipsync"], **kw)


SCENARIOS = {"paper-table3": paper_table3, "uniform-2s": uniform_scaling, "equal-cost": equal_cost}


def resolve_scenario(name: str, **kw) -> Scenario:
    try:
        return SCENARIOS[name](**kw)
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(sorted(SCENARIOS))}") from None
