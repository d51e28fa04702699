import math
from pathlib import Path

import numpy as np
import pytest
from helpers import SR, golden_input, speech, tone

from lipstream.core import AudioBuffer, MediaError, Timestamp
from lipstream.visual.kalman import KalmanTrack, kalman_step
from lipstream.visual.mel import frame_count, mel_spectrogram, read_matrix
from lipstream.visual.motion import mouth_motion_signal
from lipstream.visual.ring import (
    FaceBox,
    FrameRecord,
    FrameRing,
    OutOfOrderFrame,
    frame_ts,
    read_frames_csv,
    ring_insert,
    ring_window,
    write_frames_csv,
)
from lipstream.visual.stages import (
    LIPSYNC_PROFILES,
    WAV2LIP_FP32,
    WAV2LIP_TRT_FP16,
    SyncMismatch,
    lipsync_speedup,
    mock_face_detect,
    mock_lipsync,
)
from lipstream.visual.kalman import NotPositiveDefinite
from lipstream.visual.mel import LOG_FLOOR

GOLDEN = Path(__file__).parent / "data" / "mel_golden.f32"


def slaney_centres(sr, n_mels=80):
    """Slaney mel centres written out from the textbook definition."""
    def to_mel(f):
        return f * 3 / 200 if f < 1000 else 15 + 27 * math.log(f / 1000) / math.log(6.4)

    def to_hz(m):
        return m * 200 / 3 if m < 15 else 1000 * 6.4 ** ((m - 15) / 27)

    top = to_mel(sr / 2)
    return np.array([to_hz(top * k / (n_mels + 1)) for k in range(1, n_mels + 1)])


class TestMel:
    def test_one_second_shape(self):
        m = mel_spectrogram(AudioBuffer(np.zeros(16000, np.int16)))
        assert m.frames.shape == (59, 80)

    def test_silence_hits_floor(self):
        m = mel_spectrogram(AudioBuffer(np.zeros(4000, np.int16)))
        assert np.all(m.frames == np.log(LOG_FLOOR))

    def test_too_short(self):
        with pytest.raises(MediaError):
            mel_spectrogram(AudioBuffer(np.zeros(1023, np.int16)))

    def test_frame_count_sweep(self):
        for n in (1024, 1025, 1279, 1280, 16000, 160000):
            assert frame_count(n) == 1 + (n - 1024) // 256
            if n <= 16000:
                assert mel_spectrogram(AudioBuffer(np.zeros(n, np.int16))).n_frames == frame_count(n)

    def test_440_peak(self):
        m = mel_spectrogram(tone(440, 1000, amp=1.0 - 1e-4))
        centres = slaney_centres(SR)
        assert int(np.argmax(m.frames.mean(axis=0))) == int(np.argmin(np.abs(centres - 440)))

    def test_golden(self):
        m1 = mel_spectrogram(golden_input()).frames
        m2 = mel_spectrogram(golden_input()).frames
        assert np.array_equal(m1, m2)
        ref = read_matrix(GOLDEN)
        assert ref.shape == m1.shape
        np.testing.assert_allclose(m1.astype(np.float32), ref, rtol=1e-6, atol=1e-5)

    def test_hop_aligned_halves(self):
        x = speech(1000, seed=3)
        cut = 256 * 30
        whole = mel_spectrogram(AudioBuffer(x)).frames
        left = mel_spectrogram(AudioBuffer(x[:cut])).frames
        right = mel_spectrogram(AudioBuffer(x[cut:])).frames
        np.testing.assert_allclose(whole[: len(left)], left, rtol=0, atol=1e-9)
        k = cut // 256
        np.testing.assert_allclose(whole[k : k + len(right)], right, rtol=0, atol=1e-9)

    def test_centres(self):
        m = mel_spectrogram(AudioBuffer(np.zeros(2048, np.int16), start=Timestamp(100)))
        np.testing.assert_allclose(m.centre_ms(), [132.0, 148.0, 164.0, 180.0, 196.0])


def rec(i, fps=30.0, **kw):
    return FrameRecord(Timestamp(frame_ts(i, fps)), i, **kw)


class TestRing:
    def test_eviction(self):
        ring = FrameRing()
        evicted = [ring_insert(ring, rec(i)) for i in range(1, 302)]
        assert evicted[:300] == [None] * 300 and evicted[300].frame_index == 1
        assert [r.frame_index for r in ring.records()] == list(range(2, 302))

    def test_point_window(self):
        ring = FrameRing()
        for i in range(10):
            ring.insert(rec(i))
        t = frame_ts(4)
        assert [r.frame_index for r in ring_window(ring, t, t)] == [4]

    def test_100ms_window(self):
        ring = FrameRing()
        for i in range(300):
            ring.insert(rec(i))
        counts = {len(ring_window(ring, lo, lo + 100)) for lo in range(0, 9000)}
        assert counts == {3, 4}

    def test_out_of_order(self):
        ring = FrameRing()
        ring.insert(rec(5))
        with pytest.raises(OutOfOrderFrame):
            ring.insert(rec(5))

    def test_random_windows(self):
        rng = np.random.default_rng(0)
        ring = FrameRing(capacity=50)
        ts = np.cumsum(rng.integers(1, 60, size=400))
        for i, t in enumerate(ts):
            ring.insert(FrameRecord(Timestamp(int(t)), i))
            assert len(ring) <= 50
        held = ts[-50:]
        for _ in range(500):
            lo, hi = sorted(rng.integers(0, ts[-1] + 100, size=2))
            got = [r.ts.millis for r in ring.window(lo, hi)]
            assert got == [int(t) for t in held if lo <= t <= hi]

    def test_csv_round_trip(self, tmp_path):
        frames = [rec(i, face_box=FaceBox(320, 224, 160, 200), mouth_motion=0.25 * i) for i in range(4)]
        write_frames_csv(tmp_path / "f.csv", frames)
        back = read_frames_csv(tmp_path / "f.csv")
        assert back == frames


class TestKalman:
    def test_first_measurement(self):
        t = KalmanTrack()
        box = FaceBox(100, 120, 50, 60)
        assert kalman_step(t, box, 33) == box

    def test_converges_on_constant_box(self):
        t = KalmanTrack()
        box = FaceBox(100, 120, 50, 60)
        for _ in range(100):
            out = kalman_step(t, box, 33)
        assert np.max(np.abs(out.as_array() - box.as_array())) < 1e-6

    def test_bad_input(self):
        t = KalmanTrack()
        with pytest.raises(ValueError):
            kalman_step(t, FaceBox(1, 2, 3, 4), 0)
        with pytest.raises(ValueError):
            kalman_step(t, FaceBox(float("nan"), 2, 3, 4), 33)

    def test_coasting_follows_velocity(self):
        t = KalmanTrack()
        for k in range(60):
            kalman_step(t, FaceBox(100 + 2 * k, 100, 50, 50), 33)
        before = t.box().cx
        after = kalman_step(t, None, 33).cx
        assert after - before == pytest.approx(2.0, abs=0.05)

    def test_jitter_reduction(self):
        rng = np.random.default_rng(2024)
        steps = np.arange(300)
        truth = np.stack([200 + 0.8 * steps, 150 + 0.3 * steps], axis=1)
        raw = truth + rng.normal(0, 5, size=truth.shape)
        t = KalmanTrack()
        est = np.array([kalman_step(t, FaceBox(x, y, 160, 200), 33).as_array()[:2] for x, y in raw])
        ratio = np.var(est - truth) / np.var(raw - truth)
        assert ratio <= 0.5

    def test_covariance_stays_spd(self):
        rng = np.random.default_rng(7)
        t = KalmanTrack()
        for _ in range(10_000):
            box = None if rng.random() < 0.2 else FaceBox(*rng.uniform(0, 640, size=2), *rng.uniform(20, 300, size=2))
            kalman_step(t, box, float(rng.uniform(1, 200)))
        t.check_spd()

    def test_spd_check_detects_failure(self):
        t = KalmanTrack()
        t.covariance = -np.eye(6)
        with pytest.raises(NotPositiveDefinite):
            t.check_spd()


class TestMotion:
    def _px(self, value):
        return np.full((448, 640), value, dtype=np.uint8)

    def test_identical_frames(self):
        box = FaceBox(320, 224, 160, 200)
        frames = [rec(i, face_box=box, pixels=self._px(90)) for i in range(3)]
        assert np.all(mouth_motion_signal(frames).frame_values == 0)

    def test_alternating_is_maximal(self):
        box = FaceBox(320, 224, 160, 200)
        frames = [rec(i, face_box=box, pixels=self._px(255 * (i % 2))) for i in range(4)]
        assert list(mouth_motion_signal(frames).frame_values) == [0.0, 1.0, 1.0, 1.0]

    def test_pass_through_and_hold(self):
        box = FaceBox(320, 224, 160, 200)
        env = lambda t: 0.5 + 0.4 * np.sin(t / 70.0)
        frames = [rec(i, face_box=box, mouth_motion=float(env(frame_ts(i) - 30))) for i in range(1, 20)]
        s = mouth_motion_signal(frames)
        assert np.allclose(s.frame_values, env(s.frame_ts - 30))
        assert len(s.grid_ts) == s.frame_ts[-1] - s.frame_ts[0] + 1
        assert s.at(frame_ts(2) + 10) == s.frame_values[1]

    def test_needs_faces(self):
        with pytest.raises(ValueError):
            mouth_motion_signal([rec(0), rec(1)])


class TestStages:
    def test_lipsync_costs(self):
        assert WAV2LIP_TRT_FP16.nominal_ms(frames=30) == pytest.approx(28.8)
        assert WAV2LIP_TRT_FP16.service_ms(frames=30) == 29
        assert WAV2LIP_FP32.nominal_ms(frames=30) == pytest.approx(135.0)
        assert lipsync_speedup() == pytest.approx(4.6875)
        assert set(LIPSYNC_PROFILES) == {"wav2lip_fp32", "wav2lip_trt_fp16"}

    def test_lipsync_tags_frames(self):
        mel = mel_spectrogram(AudioBuffer(speech(1000)))
        frames = [rec(i) for i in range(30)]
        out, service = mock_lipsync(frames, mel, WAV2LIP_FP32)
        assert all(f.synced for f in out) and service == 135

    def test_lipsync_mismatch(self):
        mel = mel_spectrogram(AudioBuffer(speech(500)))
        with pytest.raises(SyncMismatch):
            mock_lipsync([rec(60)], mel, WAV2LIP_FP32)

    def test_face_detect_is_seeded(self):
        a = mock_face_detect(rec(3), seed=1).face_box
        assert a == mock_face_detect(rec(3), seed=1).face_box
        assert a != mock_face_detect(rec(3), seed=2).face_box
        assert abs(a.cx - 320) <= 4 and a.w == 160
