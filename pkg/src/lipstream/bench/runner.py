"""Runs scenarios through both execution modes and collects a report."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Optional

from ..session import ClipInput, RunResult, run_baseline, run_pipeline
from ..synthetic import SyntheticClip
from .fit import efficiency, fit_scaling
from .oracle import OracleInput, oracle_simulate
from .scenario import Scenario

GB = 1e9


@dataclass
class ClipStats:
    clip_s: float
    mode: str
    latencies_ms: list

    @property
    def mean_ms(self) -> float:
        return statistics.fmean(self.latencies_ms)

    @property
    def std_ms(self) -> float:
        return statistics.pstdev(self.latencies_ms) if len(self.latencies_ms) > 1 else 0.0


@dataclass
class RunReport:
    scenario: str
    clips: list  # ClipStats
    speedup: dict  # clip_s -> baseline mean / pipeline mean
    fits: dict
    depth_average: Optional[float] = None
    queue_high_water_bytes: int = 0
    peak_memory_bytes: dict = field(default_factory=dict)
    efficiency: dict = field(default_factory=dict)
    intervals_ms: list = field(default_factory=list)
    delta_sync_ms: list = field(default_factory=list)
    sync_failures: int = 0

    def mean(self, mode: str, clip_s: float) -> float:
        for c in self.clips:
            if c.mode == mode and c.clip_s == clip_s:
                return c.mean_ms
        raise KeyError((mode, clip_s))

    def to_csv(self) -> str:
        lines = ["clip_s,mode,mean_ms,std_ms,speedup"]
        for c in self.clips:
            sp = self.speedup.get(c.clip_s)
            lines.append(f"{c.clip_s:g},{c.mode},{c.mean_ms:.3f},{c.std_ms:.3f},{'' if sp is None else f'{sp:.4f}'}")
        return "\n".join(lines) + "\n"

    def to_summary(self) -> dict:
        return {
            "scenario": self.scenario,
            "fits": self.fits,
            "speedup": {f"{k:g}": v for k, v in self.speedup.items()},
            "pipeline_depth_average": self.depth_average,
            "queue_high_water_bytes": self.queue_high_water_bytes,
            "peak_memory_bytes": self.peak_memory_bytes,
            "efficiency": self.efficiency,
            "sync_failures": self.sync_failures,
        }

    def plot_data(self) -> str:
        """Whitespace-separated columns for gnuplot: clip_s baseline_s pipeline_s."""
        rows = ["# clip_s baseline_s pipeline_s"]
        lengths = sorted({c.clip_s for c in self.clips})
        for L in lengths:
            vals = []
            for mode in ("baseline", "pipeline"):
                try:
                    vals.append(f"{self.mean(mode, L) / 1000:.4f}")
                except KeyError:
                    vals.append("NaN")
            rows.append(f"{L:g} {' '.join(vals)}")
        return "\n".join(rows) + "\n"


def scenario_clip(scn: Scenario, clip_s: float, rep: int) -> SyntheticClip:
    return SyntheticClip(int(round(clip_s * 1000)), scn.period_ms, scn.pause_ms, fps=scn.fps, seed=scn.seed * 1000 + rep)


def run_clip(scn: Scenario, clip_s: float, mode: str, rep: int = 0) -> RunResult:
    clip = ClipInput.from_synthetic(scenario_clip(scn, clip_s, rep))
    fn = run_baseline if mode == "baseline" else run_pipeline
    return fn(clip, scn.system(rep), seed=scn.seed * 1000 + rep)


def oracle_input(scn: Scenario, clip_s: float, rep: int = 0) -> OracleInput:
    clip = scenario_clip(scn, clip_s, rep)
    cfg = scn.system(rep)
    return OracleInput(
        clip.expected_segments(scn.vad.min_segment_ms, scn.vad.max_segment_ms),
        [f.ts.millis for f in clip.frames],
        cfg.profiles,
        cfg.baseline_lipsync,
        dict(scn.clip_overhead_ms),
        scn.sync.window_ms,
        tuple(scn.sync.retry_delays()),
        scn.sync.min_frames,
        scn.sync.ring_capacity,
    )


def run_scenario(scn: Scenario) -> RunReport:
    clips: list[ClipStats] = []
    means: dict = {}
    depth, intervals, deltas = None, [], []
    hw = 0
    peak: dict = {}
    failures = 0
    longest = max(scn.clip_lengths_s)
    for L in scn.clip_lengths_s:
        for mode in scn.modes():
            lat = []
            for rep in range(scn.repetitions):
                r = run_clip(scn, L, mode, rep)
                lat.append(r.latency_ms)
                failures += r.sync_failures
                if mode == "pipeline":
                    hw = max(hw, max(r.queue_high_water.values(), default=0))
                    peak[f"{L:g}"] = max(peak.get(f"{L:g}", 0), r.peak_memory_bytes)
                    deltas.extend(s["delta_sync_ms"] for s in r.segments if s["delta_sync_ms"] is not None)
                    if L == longest:
                        emitted = sorted(s["emitted_ms"] for s in r.segments if s["emitted_ms"] is not None)
                        intervals.extend(b - a for a, b in zip(emitted[1:], emitted[2:]))
                        depth = (depth or 0.0) + r.depth_average / scn.repetitions
            cs = ClipStats(L, mode, lat)
            clips.append(cs)
            means[(mode, L)] = cs.mean_ms
    speedup = {}
    if scn.mode == "both":
        speedup = {L: means[("baseline", L)] / means[("pipeline", L)] for L in scn.clip_lengths_s}
    fits: dict = {}
    if len(scn.clip_lengths_s) >= 3:
        xs = list(scn.clip_lengths_s)
        if scn.mode == "both":
            fits = fit_scaling(xs, [means[("baseline", L)] / 1000 for L in xs], [means[("pipeline", L)] / 1000 for L in xs])
        else:
            from .fit import ols

            f = ols(xs, [means[(scn.mode, L)] / 1000 for L in xs])
            fits = {f"slope_{scn.mode}": f.slope, f"intercept_{scn.mode}": f.intercept, f"r2_{scn.mode}": f.r2}
    eff = {}
    for L in scn.clip_lengths_s:
        if ("pipeline", L) in means and peak.get(f"{L:g}"):
            eff[f"{L:g}"] = efficiency(means[("pipeline", L)] / 1000, peak[f"{L:g}"] / GB)
    return RunReport(scn.name, clips, speedup, fits, depth, hw, peak, eff, intervals, deltas, failures)


def oracle_latency(scn: Scenario, clip_s: float, mode: str, rep: int = 0) -> int:
    return oracle_simulate(oracle_input(scn, clip_s, rep), mode).latency_ms
