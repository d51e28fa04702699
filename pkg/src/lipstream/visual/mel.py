"""Log-mel spectrogram: 1024-point FFT, hop 256, periodic Hann, 80 Slaney mel bands.

No centre padding is applied, so a buffer of ``N >= 1024`` samples always
yields ``1 + (N - 1024) // 256`` frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..core.types import AudioBuffer, MediaError, Timestamp

N_FFT = 1024
HOP = 256
N_MELS = 80
LOG_FLOOR = 1e-10

_F_SP = 200.0 / 3.0
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = np.log(6.4) / 27.0


def hz_to_mel(hz):
    hz = np.asarray(hz, dtype=np.float64)
    mel = hz / _F_SP
    log_region = hz >= _MIN_LOG_HZ
    mel = np.where(log_region, _MIN_LOG_MEL + np.log(np.maximum(hz, 1e-12) / _MIN_LOG_HZ) / _LOGSTEP, mel)
    return mel


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    hz = mel * _F_SP
    return np.where(mel >= _MIN_LOG_MEL, _MIN_LOG_HZ * np.exp(_LOGSTEP * (mel - _MIN_LOG_MEL)), hz)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int = N_FFT, n_mels: int = N_MELS) -> np.ndarray:
    """Area-normalised triangular filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    fft_hz = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_hz[None, :] - lower) / (centre - lower)
    falling = (upper - fft_hz[None, :]) / (upper - centre)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.flags.writeable = False
    return weights


def mel_centres_hz(sample_rate: int, n_mels: int = N_MELS) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))[1:-1]


def frame_count(n_samples: int) -> int:
    if n_samples < N_FFT:
        raise MediaError(f"need at least {N_FFT} samples for one frame, got {n_samples}")
    return 1 + (n_samples - N_FFT) // HOP


@dataclass(frozen=True, eq=False)
class MelSpec:
    frames: np.ndarray  # (F, 80) natural-log mel energies
    sample_rate: int
    start: Timestamp
    hop: int = HOP
    fft: int = N_FFT

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def centre_ms(self) -> np.ndarray:
        """Media time of each frame's centre, in ms."""
        idx = np.arange(self.n_frames)
        return self.start.millis + (idx * self.hop + self.fft / 2) * 1000.0 / self.sample_rate


_WINDOW = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(N_FFT) / N_FFT)


def mel_spectrogram(audio: AudioBuffer) -> MelSpec:
    x = audio.as_float()
    f = frame_count(len(x))
    idx = np.arange(N_FFT)[None, :] + HOP * np.arange(f)[:, None]
    mag = np.abs(np.fft.rfft(x[idx] * _WINDOW, axis=1))
    mel = mag @ mel_filterbank(audio.sample_rate).T
    return MelSpec(np.log(np.maximum(mel, LOG_FLOOR)), audio.sample_rate, audio.start)


def write_matrix(path: str | Path, m: np.ndarray) -> None:
    """Little-endian f32 matrix with a ``u32 rows, u32 cols`` header."""
    m = np.asarray(m, dtype="<f4")
    Path(path).write_bytes(struct.pack("<II", *m.shape) + m.tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    rows, cols = struct.unpack_from("<II", data, 0)
    if len(data) != 8 + 4 * rows * cols:
        raise ValueError(f"{path}: header says {rows}x{cols} but body has {len(data) - 8} bytes")
    return np.frombuffer(data, dtype="<f4", offset=8).reshape(rows, cols).astype(np.float32)
