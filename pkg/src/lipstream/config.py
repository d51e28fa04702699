"""Flat dotted-key configuration (TOML syntax).

An empty file reproduces the defaults. Example::

    vad.silence_ms = 500
    boundary.threshold = 0.85
    stages.tts.per_sec_ms = 700
    drift.mode = "raw"
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bench.scenario import Scenario, resolve_scenario
from .broker import QueueConfig
from .orchestrator import SyncConfig
from .pipeline import STAGE_NAMES, StageProfile
from .segmenter import VadConfig
from .visual.stages import LIPSYNC_PROFILES


class ConfigError(ValueError):
    pass


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from None


def _apply(obj, section: dict, prefix: str, rename: dict | None = None):
    rename = rename or {}
    names = {f.name for f in fields(obj)}
    updates = {}
    for key, value in section.items():
        target = rename.get(key, key)
        if target not in names or isinstance(value, dict):
            raise ConfigError(f"unknown config key {prefix}.{key}")
        updates[target] = value
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{prefix}] settings: {exc}") from None


def apply_config(scn: Scenario, cfg: dict) -> Scenario:
    """Overlay a parsed config on a scenario, rejecting unknown keys."""
    cfg = dict(cfg)
    vad = scn.vad
    if "vad" in cfg:
        vad = _apply(vad, cfg.pop("vad"), "vad")
    threshold = scn.boundary_threshold
    if "boundary" in cfg:
        b = dict(cfg.pop("boundary"))
        if set(b) - {"threshold"}:
            raise ConfigError(f"unknown config key boundary.{sorted(set(b) - {'threshold'})[0]}")
        threshold = float(b.get("threshold", threshold))
    sync = scn.sync
    if "sync" in cfg:
        sync = _apply(sync, cfg.pop("sync"), "sync")
    if "drift" in cfg:
        sync = _apply(sync, cfg.pop("drift"), "drift", {"mode": "drift_mode", "alpha": "drift_alpha", "limit_ms": "drift_limit_ms"})
    if "frame" in cfg:
        sync = _apply(sync, cfg.pop("frame"), "frame", {"width": "frame_width", "height": "frame_height"})
    profiles = dict(scn.profiles)
    baseline_ls = scn.baseline_lipsync
    stages = cfg.pop("stages", {})
    for name, section in stages.items():
        if name not in STAGE_NAMES and name != "baseline_lipsync":
            raise ConfigError(f"unknown stage stages.{name}")
        section = dict(section)
        preset = section.pop("profile", None)
        if name == "baseline_lipsync":
            base = LIPSYNC_PROFILES[preset] if preset else (baseline_ls or StageProfile("lipsync"))
            baseline_ls = _apply(base, section, f"stages.{name}")
            continue
        if preset is not None:
            if name != "lipsync" or preset not in LIPSYNC_PROFILES:
                raise ConfigError(f"unknown profile preset {preset!r} for stages.{name}")
            base = replace(LIPSYNC_PROFILES[preset], jitter_pct=profiles[name].jitter_pct)
        else:
            base = profiles.get(name, StageProfile(name))
        profiles[name] = _apply(base, section, f"stages.{name}")
    kw: dict[str, Any] = {}
    if "bench" in cfg:
        bench = dict(cfg.pop("bench"))
        overhead = bench.pop("overhead_ms", None)
        if overhead is not None:
            kw["clip_overhead_ms"] = {**scn.clip_overhead_ms, **overhead}
        for key in list(bench):
            if key not in ("clip_lengths_s", "repetitions", "seed", "period_ms", "pause_ms", "fps"):
                raise ConfigError(f"unknown config key bench.{key}")
            value = bench.pop(key)
            kw[key] = tuple(value) if key == "clip_lengths_s" else value
    if "broker" in cfg:
        # queue settings are carried on the scenario via the system config
        kw["queue"] = _apply(QueueConfig("audio_queue"), cfg.pop("broker"), "broker", {"backoff_base_ms": "backoff_base"})
    if cfg:
        raise ConfigError(f"unknown config section {sorted(cfg)[0]!r}")
    queue = kw.pop("queue", None)
    out = replace(scn, vad=vad, sync=sync, profiles=profiles, baseline_lipsync=baseline_ls, boundary_threshold=threshold, **kw)
    if queue is not None:
        out = replace(out, queue=queue)
    return out


def scenario_from_config(name: str, cfg: dict) -> Scenario:
    return apply_config(resolve_scenario(name), cfg)


def _plain(obj):
    if is_dataclass(obj):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_hash(scn: Scenario) -> str:
    blob = json.dumps(_plain(scn), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()
