"""Command-line front end.

Commands: ``run`` (one clip through baseline or pipeline mode), ``bench``
(calibrated scenarios), ``report`` (render saved results) and ``segment``
(inspect segmentation of a WAV file).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bench.runner import run_scenario
from .bench.scenario import SCENARIOS, paper_table3
from .config import ConfigError, apply_config, config_hash, load_config, scenario_from_config
from .core.clock import MediaClock
from .core.types import AudioBuffer, MediaError, Timestamp
from .core.wav import read_wav
from .pipeline import energy_envelope
from .segmenter import Segmenter, VadConfig, always_complete, heuristic_boundary_scorer
from .session import ClipInput, run_baseline, run_pipeline
from .synthetic import SyntheticClip
from .visual.ring import FrameRecord, frame_ts, read_frames_csv

log = logging.getLogger("lipstream")

EXIT_OK, EXIT_USAGE, EXIT_SYNC_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="dotted-key config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--clock", choices=("virtual", "real"), default="virtual")

    p = _Parser(prog="lipstream", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lipstream {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", parents=[common], help="run one clip end to end")
    run.add_argument("--mode", choices=("baseline", "pipeline"), default="pipeline")
    run.add_argument("--input", action="append", required=True,
                     help="WAV file, frame CSV, or synthetic:<N>s (repeatable)")

    bench = sub.add_parser("bench", parents=[common], help="run a benchmark scenario")
    bench.add_argument("--scenario", default="paper-table3")
    bench.add_argument("--mode", choices=("both", "baseline", "pipeline"), default="both")

    report = sub.add_parser("report", parents=[common], help="render saved results")
    report.add_argument("--input", action="append", required=True, help="output directory of run or bench")

    seg = sub.add_parser("segment", parents=[common], help="list the segments of a WAV file")
    seg.add_argument("--mode", choices=("semantic", "baseline"), default="semantic")
    seg.add_argument("--input", action="append", required=True, help="WAV file or synthetic:<N>s")
    return p


# inputs --------------------------------------------------------------------


def frames_from_audio(audio: AudioBuffer, fps: float = 30.0) -> list[FrameRecord]:
    """Stand-in frame records when only audio is supplied: mouth motion follows the audio energy."""
    env = energy_envelope(audio, 10)
    env = env / env.max() if len(env) and env.max() > 0 else env
    centres = (np.arange(len(env)) + 0.5) * 10
    out, i = [], 0
    while (ts := frame_ts(i, fps)) < audio.duration_ms:
        motion = float(np.interp(ts, centres, env)) if len(env) else 0.0
        out.append(FrameRecord(Timestamp(audio.start.millis + ts), i, None, motion))
        i += 1
    return out


def load_inputs(inputs: Sequence[str], seed: int, scenario) -> ClipInput:
    audio = frames = None
    hint = None
    for item in inputs:
        if item.startswith("synthetic:"):
            try:
                clip = SyntheticClip.from_spec(item, seed=seed, period_ms=scenario.period_ms,
                                               pause_ms=scenario.pause_ms, fps=scenario.fps)
            except ValueError as exc:
                raise MediaError(str(exc)) from None
            audio, frames, hint = clip.audio, clip.frames, clip.hint
        elif item.lower().endswith(".csv"):
            try:
                frames = read_frames_csv(item)
            except OSError as exc:
                raise MediaError(f"{item}: {exc.strerror}") from None
        else:
            try:
                audio = read_wav(item)
            except OSError as exc:
                raise MediaError(f"{item}: {exc.strerror}") from None
            if audio.sample_rate != 16000:
                raise MediaError(f"{item}: sample rate {audio.sample_rate} Hz, only 16000 Hz is accepted")
    if audio is None:
        raise MediaError("no audio input given (WAV file or synthetic:<N>s)")
    if frames is None:
        frames = frames_from_audio(audio, scenario.fps)
    return ClipInput(audio, frames, hint, scenario.fps)


# outputs -------------------------------------------------------------------


def write_manifest(out: Path, args, scn, extra: Optional[dict] = None) -> None:
    manifest = {
        "command": args.command,
        "mode": getattr(args, "mode", None),
        "inputs": list(getattr(args, "input", []) or []),
        "scenario": scn.name,
        "config_file": args.config,
        "config_hash": config_hash(scn),
        "seed": args.seed,
        "clock": args.clock,
        "versions": {"lipstream": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    return buf.getvalue()


SEGMENT_COLUMNS = ["segment", "birth_ms", "status", "emitted_ms", "latency_ms", "delta_sync_ms", "offset_ms", "frames"]


# commands --------------------------------------------------------------------


def _scenario(args, name: str = "paper-table3"):
    cfg = load_config(args.config)
    scn = scenario_from_config(name, cfg)
    return replace(scn, seed=args.seed)


def cmd_run(args) -> int:
    scn = _scenario(args)
    clip = load_inputs(args.input, args.seed, scn)
    system = scn.system(0)
    clock = MediaClock(args.clock)
    fn = run_baseline if args.mode == "baseline" else run_pipeline
    result = fn(clip, system, seed=args.seed, clock=clock)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.events.write(out / "events.ndjson")
    (out / "segments.csv").write_text(_csv(result.segments, SEGMENT_COLUMNS))
    deltas = [s["delta_sync_ms"] for s in result.segments if s.get("delta_sync_ms") is not None]
    metrics = [
        ("mode", result.mode),
        ("latency_ms", result.latency_ms),
        ("segments", len(result.segments)),
        ("emitted", sum(1 for s in result.segments if s["status"] == "emitted")),
        ("sync_failures", result.sync_failures),
        ("dead_letters", len(result.events.of_kind("dead_letter"))),
        ("resyncs", len(result.events.of_kind("resync"))),
        ("pipeline_depth_avg", f"{result.depth_average:.4f}"),
        ("delta_sync_max_ms", max(deltas) if deltas else ""),
        ("queue_high_water_bytes", max(result.queue_high_water.values(), default=0)),
        ("frame_buffer_high_water_bytes", result.frame_high_water),
        ("audio_buffer_high_water_bytes", result.audio_high_water),
        ("scorer_calls", result.scorer_calls),
    ]
    (out / "metrics.csv").write_text("metric,value\n" + "".join(f"{k},{v}\n" for k, v in metrics))
    write_manifest(out, args, scn)
    print(f"{result.mode}: {len(result.segments)} segment(s), clip latency {result.latency_ms / 1000:.3f} s")
    if result.scorer_calls:
        print(f"boundary scorer: {result.scorer_calls} call(s), mean {result.scorer_mean_ms:.3f} ms wall")
    if result.sync_failures:
        print(f"{result.sync_failures} sync failure(s)", file=sys.stderr)
        return EXIT_SYNC_FAILURE
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; known: {', '.join(sorted(SCENARIOS))}")
    scn = replace(_scenario(args, args.scenario), mode=args.mode)
    report = run_scenario(scn)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(report.to_csv())
    (out / "summary.json").write_text(json.dumps(report.to_summary(), indent=2, sort_keys=True) + "\n")
    (out / "latency.dat").write_text(report.plot_data())
    write_manifest(out, args, scn)
    print(render_bench(report.to_csv(), report.to_summary()))
    return EXIT_OK


def render_bench(csv_text: str, summary: dict) -> str:
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    table: dict = {}
    for r in rows:
        table.setdefault(r["clip_s"], {})[r["mode"]] = r
    lines = [f"{'clip (s)':>8}  {'baseline (s)':>13}  {'pipeline (s)':>13}  {'speedup':>7}"]
    for clip, modes in table.items():
        def cell(m):
            r = modes.get(m)
            return f"{float(r['mean_ms']) / 1000:6.2f} ± {float(r['std_ms']) / 1000:4.2f}" if r else f"{'-':>13}"
        sp = next((r["speedup"] for r in modes.values() if r["speedup"]), "")
        lines.append(f"{clip:>8}  {cell('baseline'):>13}  {cell('pipeline'):>13}  {(f'{float(sp):.2f}x' if sp else '-'):>7}")
    fits = summary.get("fits") or {}
    if "slope_baseline" in fits:
        lines.append(f"fitted slope: baseline {fits['slope_baseline']:.3f} s/s, pipeline {fits['slope_pipeline']:.3f} s/s")
    if summary.get("pipeline_depth_average") is not None:
        lines.append(f"mean pipeline depth (longest clip): {summary['pipeline_depth_average']:.2f}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    for item in args.input:
        d = Path(item)
        if (d / "bench.csv").exists():
            summary = json.loads((d / "summary.json").read_text()) if (d / "summary.json").exists() else {}
            print(f"== {d}")
            print(render_bench((d / "bench.csv").read_text(), summary))
        elif (d / "metrics.csv").exists():
            print(f"== {d}")
            for row in csv.DictReader(open(d / "metrics.csv")):
                print(f"{row['metric']:>30}  {row['value']}")
        else:
            raise MediaError(f"{d}: no bench.csv or metrics.csv found")
    return EXIT_OK


def cmd_segment(args) -> int:
    scn = _scenario(args)
    clip = load_inputs(args.input, args.seed, scn)
    if args.mode == "baseline":
        vad = VadConfig.baseline(silence_ms=scn.vad.silence_ms, energy_floor_db=scn.vad.energy_floor_db, frame_ms=scn.vad.frame_ms)
        scorer = always_complete
    else:
        vad = scn.vad
        scorer = lambda h, acc: heuristic_boundary_scorer(h, acc, scn.boundary_threshold)
    seg = Segmenter(vad, scorer, clip.hint, args.seed)
    segments = seg.feed(clip.audio) + seg.flush() if len(clip.audio) else []
    for s in segments:
        print(f"{s.start.millis} {s.end.millis} {s.duration_ms} {s.boundary_confidence:.2f} {str(s.forced_split).lower()}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "report": cmd_report, "segment": cmd_segment}


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("LIPSTREAM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"lipstream: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MediaError, ConfigError) as exc:
        print(f"lipstream: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
