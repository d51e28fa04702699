"""Face-detection and lip-sync stage mocks plus the visual branch worker."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from ..core.codec import pack_fields, unpack_fields
from ..core.types import AudioBuffer, Timestamp
from ..pipeline import Noise, StageProfile
from .kalman import KalmanTrack, kalman_step
from .mel import MelSpec, mel_spectrogram
from .ring import FaceBox, FrameRecord, FrameRing

WAV2LIP_FP32 = StageProfile("lipsync", per_frame_ms=4.50)
WAV2LIP_TRT_FP16 = StageProfile("lipsync", per_frame_ms=0.96)
LIPSYNC_PROFILES = {"wav2lip_fp32": WAV2LIP_FP32, "wav2lip_trt_fp16": WAV2LIP_TRT_FP16}


class SyncMismatch(ValueError):
    pass


def mock_face_detect(frame: FrameRecord, seed: int = 0) -> FrameRecord:
    """Deterministic face box for a frame: a centred face with seeded wobble."""
    h = hashlib.blake2b(struct.pack("<qq", seed, frame.frame_index), digest_size=8).digest()
    jx, jy = (b / 255.0 - 0.5 for b in h[:2])
    box = FaceBox(320.0 + 8.0 * jx, 224.0 + 8.0 * jy, 160.0, 200.0)
    return replace(frame, face_box=box)


def lipsync_speedup(slow: StageProfile = WAV2LIP_FP32, fast: StageProfile = WAV2LIP_TRT_FP16) -> float:
    return slow.per_frame_ms / fast.per_frame_ms


def mock_lipsync(
    frames: Sequence[FrameRecord],
    mel: MelSpec,
    profile: StageProfile,
    factor: float = 1.0,
    window_ms: int = 50,
) -> tuple[list[FrameRecord], int]:
    """Tag frames as synced; return them with the simulated service time."""
    if frames:
        span_lo = mel.start.millis - window_ms
        # the audio tail shorter than one hop never forms a mel frame
        dur = (mel.n_frames * mel.hop + mel.fft) * 1000.0 / mel.sample_rate
        span_hi = mel.start.millis + dur + window_ms
        bad = [f.ts.millis for f in frames if not span_lo <= f.ts.millis <= span_hi]
        if bad:
            raise SyncMismatch(f"{len(bad)} frame(s) fall outside the mel span, first at {bad[0]} ms")
    out = [replace(f, synced=True) for f in frames]
    return out, profile.service_ms(0, len(frames), factor)


# payloads between orchestrator and lip-sync ----------------------------------


def pack_frames(frames: Sequence[FrameRecord]) -> dict:
    boxes = np.full((len(frames), 4), np.nan)
    for i, f in enumerate(frames):
        if f.face_box is not None:
            boxes[i] = f.face_box.as_array()
    return {
        "f_index": np.array([f.frame_index for f in frames], dtype=np.float64),
        "f_ts": np.array([f.ts.millis for f in frames], dtype=np.float64),
        "f_box": boxes.reshape(-1),
        "f_motion": np.array([f.mouth_motion for f in frames], dtype=np.float64),
    }


def unpack_frames(f: dict) -> list[FrameRecord]:
    boxes = f["f_box"].reshape(-1, 4)
    out = []
    for i in range(len(f["f_index"])):
        b = boxes[i]
        box = None if np.isnan(b).any() else FaceBox(*map(float, b))
        out.append(FrameRecord(Timestamp(int(f["f_ts"][i])), int(f["f_index"][i]), box, float(f["f_motion"][i])))
    return out


@dataclass
class LipsyncStage:
    """Worker adapter: decode an aligned pair, run mel + mock lip-sync."""

    profile: StageProfile
    frame_bytes: int = 640 * 448 * 3
    window_ms: int = 50
    name: str = "lipsync"

    def handle(self, payload: bytes, factor: float, now: Timestamp) -> tuple[bytes, int, int]:
        f = unpack_fields(payload)
        audio = AudioBuffer(f["audio"], f["audio_rate"], Timestamp(f["audio_start"]))
        frames = unpack_frames(f)
        # frames were re-timestamped by the alignment offset before dispatch
        mel = mel_spectrogram(audio)
        synced, service = mock_lipsync(frames, mel, self.profile, factor, self.window_ms + abs(f["offset_ms"]))
        meta = {k: v for k, v in f.items() if k not in ("audio", "f_box", "f_motion")}
        meta.update(type="lipsync_output", n_frames=len(synced), mel_frames=mel.n_frames, lipsync_ms=service)
        data = pack_fields(meta)
        return data, len(data) + len(synced) * self.frame_bytes, service


# visual branch worker --------------------------------------------------------


@dataclass
class VisualBranch:
    """Face detection, Kalman smoothing and ring insertion for a frame source.

    ``arrivals[i]`` is when frame ``i`` becomes available to the detector.
    The detector handles one frame at a time, so frame ``i`` is ready at
    ``max(arrival_i, ready_{i-1}) + service_i``.
    """

    ring: FrameRing
    profile: StageProfile
    seed: int = 0
    smooth: bool = True
    ready_log: list = field(default_factory=list)

    def process(self, clock, frames: Sequence[FrameRecord], arrivals: Optional[Iterable[int]] = None):
        noise = Noise(self.profile)
        track = KalmanTrack()
        arrivals = list(arrivals) if arrivals is not None else [f.ts.millis for f in frames]
        prev_ts = None
        for frame, arrive in zip(frames, arrivals):
            if clock.now_ms < arrive:
                yield arrive - clock.now_ms
            service = self.profile.service_ms(0, 1, noise.factor())
            if service:
                yield service
            det = mock_face_detect(frame, self.seed)
            if self.smooth and det.face_box is not None:
                dt = det.ts.millis - prev_ts if prev_ts is not None else 1
                det = replace(det, face_box=kalman_step(track, det.face_box, max(dt, 1)))
            prev_ts = det.ts.millis
            self.ring.insert(det, clock.now_ms)
            self.ready_log.append((det.frame_index, clock.now_ms))
