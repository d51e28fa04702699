import math

import numpy as np

from lipstream.core.types import AudioBuffer, Timestamp

SR = 16000


def tone(freq, ms, amp=0.5, sr=SR, start=0):
    t = np.arange(ms * sr // 1000) / sr
    return AudioBuffer(np.round(amp * 32767 * np.sin(2 * np.pi * freq * t)).astype(np.int16), sr, Timestamp(start))


def speech(ms, level=0.5, seed=0, sr=SR):
    """Voiced, amplitude-modulated signal that an energy VAD reads as speech throughout."""
    rng = np.random.default_rng(seed)
    t = np.arange(ms * sr // 1000) / sr
    f0 = 120 + 60 * rng.random()
    voice = sum(np.sin(2 * np.pi * f0 * h * t) / h for h in (1, 2, 3)) / 1.8
    env = 0.8 + 0.2 * np.sin(2 * np.pi * (2 + 3 * rng.random()) * t)
    return np.round(level * 32767 * env * voice).astype(np.int16)


def silence(ms, sr=SR, dither=0, seed=0):
    n = ms * sr // 1000
    if not dither:
        return np.zeros(n, dtype=np.int16)
    return np.random.default_rng(seed).integers(-dither, dither + 1, size=n).astype(np.int16)


def golden_input():
    """Fixed 0.5 s test signal for the mel golden file."""
    t = np.arange(8000) / SR
    x = 0.3 * np.sin(2 * np.pi * 300 * t) + 0.2 * np.sin(2 * np.pi * 1250 * t) + 0.1 * np.sin(2 * np.pi * (500 + 4000 * t) * t)
    return AudioBuffer(np.round(x * 32767).astype(np.int16), SR, Timestamp(0))


def random_stream(rng, total_ms=None):
    """Alternating speech/silence runs; returns (samples, [(kind, lo_ms, hi_ms)])."""
    runs, parts, t = [], [], 0
    limit = total_ms if total_ms is not None else rng.randint(500, 30000)
    kind = rng.choice(["speech", "silence"])
    while t < limit:
        if kind == "speech":
            ms = rng.randint(100, 12000)
            parts.append(speech(ms, level=rng.uniform(0.2, 0.8), seed=rng.randrange(1 << 30)))
        else:
            ms = rng.randint(40, 1500)
            parts.append(silence(ms))
        runs.append((kind, t, t + ms))
        t += ms
        kind = "silence" if kind == "speech" else "speech"
    return np.concatenate(parts), runs


def feed_in_chunks(segmenter, samples, rng, sr=SR):
    out, pos = [], 0
    while pos < len(samples):
        n = rng.randint(1, 8000)
        out.extend(segmenter.feed(AudioBuffer(samples[pos : pos + n], sr, Timestamp(pos * 1000 // sr))))
        pos += n
    out.extend(segmenter.flush())
    return out


def am_noise(ms, seed=0, sr=SR, start=0):
    """Noise with a random slowly varying loudness, so its energy envelope has structure."""
    rng = np.random.default_rng(seed)
    n = ms * sr // 1000
    knots = rng.uniform(0.05, 1.0, size=ms // 40 + 2)
    gain = np.interp(np.arange(n), np.linspace(0, n, len(knots)), knots)
    x = gain * rng.normal(0, 0.2, size=n)
    return AudioBuffer(np.clip(np.round(x * 32767), -32768, 32767).astype(np.int16), sr, Timestamp(start))


def rms_envelope(audio, hop_ms=10):
    """Block RMS written out longhand: (block centre in ms, value) pairs."""
    hop = audio.sample_rate * hop_ms // 1000
    x = [s / 32768.0 for s in audio.samples.tolist()]
    centres, values = [], []
    for k in range(0, len(x), hop):
        block = x[k : k + hop]
        values.append(math.sqrt(sum(v * v for v in block) / len(block)))
        centres.append(audio.start.millis + (k // hop + 0.5) * hop_ms)
    return np.array(centres), np.array(values)


def brute_force_lag(audio, frame_ts, motion, lags):
    """Argmax of Pearson correlation over ``lags``; ties to the smallest |lag|, then negative."""
    centres, values = rms_envelope(audio)
    best, best_r = None, -2.0
    for lag in sorted(lags, key=lambda l: (abs(l), l)):
        e = np.interp(np.asarray(frame_ts, dtype=float) - lag, centres, values)
        if np.std(e) == 0 or np.std(motion) == 0:
            continue
        r = float(np.corrcoef(e, motion)[0, 1])
        if r > best_r + 1e-12:
            best, best_r = lag, r
    return best


def delayed_motion_frames(audio, delay_ms, lo, hi, fps=30.0):
    """Frames in [lo, hi] whose mouth motion is the audio energy delayed by ``delay_ms``."""
    from lipstream.visual.ring import FaceBox, FrameRecord, frame_ts

    centres, values = rms_envelope(audio)
    out, i = [], 0
    while frame_ts(i, fps) <= hi:
        t = frame_ts(i, fps)
        if t >= lo:
            m = float(np.interp(t - delay_ms, centres, values))
            out.append(FrameRecord(Timestamp(t), i, FaceBox(320, 224, 160, 200), m))
        i += 1
    return out
