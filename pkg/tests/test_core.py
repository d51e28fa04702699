import heapq
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipstream.core import (
    LATE,
    AudioBuffer,
    ClockUsageError,
    Event,
    MediaClock,
    MediaError,
    Segment,
    SegmentId,
    Timestamp,
    audio_concat,
    clock_advance,
    spawn,
    timeout,
)


class TestTimestamp:
    def test_difference_is_signed_duration(self):
        assert Timestamp(30) - Timestamp(100) == -70
        assert Timestamp(100) + 5 == Timestamp(105)

    def test_rejects_negative_and_fractional(self):
        with pytest.raises(ValueError):
            Timestamp(-1)
        with pytest.raises(TypeError):
            Timestamp(1.5)
        with pytest.raises(TypeError):
            Timestamp(3) + 0.5

    @given(st.integers(0, 10**9), st.integers(0, 10**6), st.integers(0, 10**6))
    def test_addition_associates(self, t, a, b):
        assert (Timestamp(t) + a) + b == Timestamp(t) + (a + b)

    @given(st.lists(st.integers(0, 10**6), min_size=2, max_size=20))
    def test_total_order_matches_integers(self, xs):
        assert sorted(Timestamp(x) for x in xs) == [Timestamp(x) for x in sorted(xs)]


class TestAudio:
    def test_duration_rounds(self):
        assert AudioBuffer(np.zeros(16000, np.int16)).duration_ms == 1000
        assert AudioBuffer(np.zeros(8, np.int16)).duration_ms == 1  # 0.5 ms rounds up

    def test_concat_lengths(self):
        a = AudioBuffer(np.ones(16000, np.int16))
        b = AudioBuffer(np.ones(8000, np.int16), start=Timestamp(1000))
        c = audio_concat(a, b)
        assert c.duration_ms == 1500 and len(c) == 24000 and c.start == a.start

    def test_concat_empty_is_identity(self):
        a = AudioBuffer(np.arange(100, dtype=np.int16), start=Timestamp(7))
        assert audio_concat(a, AudioBuffer(np.zeros(0, np.int16), start=a.end)) == a

    def test_concat_rate_mismatch(self):
        a = AudioBuffer(np.ones(160, np.int16))
        b = AudioBuffer(np.ones(80, np.int16), 8000, Timestamp(10))
        with pytest.raises(MediaError, match="sample-rate"):
            audio_concat(a, b)

    def test_concat_gap_beyond_tolerance(self):
        a = AudioBuffer(np.ones(1600, np.int16))
        with pytest.raises(MediaError, match="non-contiguous"):
            audio_concat(a, AudioBuffer(np.ones(160, np.int16), start=Timestamp(102)))
        # one millisecond of slack is allowed
        audio_concat(a, AudioBuffer(np.ones(160, np.int16), start=Timestamp(101)))

    def test_rejects_stereo_and_bad_rate(self):
        with pytest.raises(MediaError):
            AudioBuffer(np.zeros((10, 2), np.int16))
        with pytest.raises(MediaError):
            AudioBuffer(np.zeros(10, np.int16), 0)

    def test_samples_are_immutable(self):
        a = AudioBuffer(np.zeros(10, np.int16))
        with pytest.raises(ValueError):
            a.samples[0] = 1

    def test_segment_confidence_range(self):
        sid = SegmentId.from_rng(__import__("random").Random(1), Timestamp(0))
        with pytest.raises(ValueError):
            Segment(sid, AudioBuffer(np.zeros(10, np.int16)), boundary_confidence=1.5)


class TestClock:
    def test_advance_examples(self):
        c = MediaClock()
        assert clock_advance(c, 50) == Timestamp(50)
        c2 = MediaClock(start_ms=100)
        assert c2.advance(0) == Timestamp(100)

    def test_now_stable_without_advance(self):
        c = MediaClock()
        c.advance(17)
        assert c.now == c.now == Timestamp(17)

    def test_timers_fire_in_due_order(self):
        c = MediaClock()
        fired = []
        c.call_at(70, fired.append, 70)
        c.call_at(30, fired.append, 30)
        c.advance(100)
        assert fired == [30, 70]

    def test_real_clock_refuses_advance(self):
        with pytest.raises(ClockUsageError):
            MediaClock("real").advance(1)

    def test_negative_advance(self):
        with pytest.raises(ValueError):
            MediaClock().advance(-1)

    def test_timer_sees_its_due_time(self):
        c = MediaClock()
        seen = []
        c.call_at(42, lambda: seen.append(c.now_ms))
        c.advance(100)
        assert seen == [42] and c.now_ms == 100

    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.integers(0, 500), st.integers(0, 2)), max_size=40), st.lists(st.integers(0, 200), min_size=1, max_size=8))
    def test_matches_sorted_heap_oracle(self, timers, steps):
        c = MediaClock()
        fired = []
        oracle = []
        for seq, (due, prio) in enumerate(timers):
            c.call_at(due, fired.append, (due, prio, seq), priority=prio)
            heapq.heappush(oracle, (due, prio, seq))
        now = 0
        expected = []
        for step in steps:
            now += step
            c.advance(step)
            while oracle and oracle[0][0] <= now:
                expected.append(heapq.heappop(oracle))
            assert fired == expected

    def test_cancelled_timer_does_not_fire(self):
        c = MediaClock()
        fired = []
        t = c.call_at(10, fired.append, 1)
        t.cancel()
        c.advance(20)
        assert fired == []

    def test_real_clock_is_monotone_and_runs_timers(self):
        c = MediaClock("real")
        fired = []
        c.call_later(5, lambda: fired.append(c.now_ms))
        readings = [c.now_ms for _ in range(100)]
        assert readings == sorted(readings)
        c.run(idle_timeout_s=0.02)
        assert len(fired) == 1 and fired[0] >= 5

    def test_thread_safe_scheduling(self):
        c = MediaClock()
        def worker():
            for i in range(200):
                c.call_at(i, lambda: None)
        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert c.pending() == 800
        c.run()
        assert c.fired == 800


class TestProcesses:
    def test_sleep_and_event(self):
        c = MediaClock()
        ev = Event(c)
        log = []

        def waiter():
            v = yield ev
            log.append((c.now_ms, v))

        def trigger():
            yield 25
            ev.succeed("go")

        spawn(c, waiter())
        spawn(c, trigger())
        c.run()
        assert log == [(25, "go")]

    def test_late_runs_after_same_instant_work(self):
        c = MediaClock()
        order = []

        def late():
            yield 10
            yield LATE
            order.append("late")

        def normal():
            yield 10
            order.append("normal")

        spawn(c, late())
        spawn(c, normal())
        c.run()
        assert order == ["normal", "late"]

    def test_timeout_event(self):
        c = MediaClock()
        ev = timeout(c, 40, "x")
        c.run()
        assert ev.triggered and ev.value == "x" and c.now_ms == 40

    def test_virtual_runs_are_deterministic(self):
        def trace(seed):
            import random

            c = MediaClock()
            rng = random.Random(seed)
            out = []

            def proc(k):
                for _ in range(20):
                    yield rng.randint(0, 30)
                    out.append((c.now_ms, k))

            for k in range(5):
                spawn(c, proc(k))
            c.run()
            return out

        assert trace(3) == trace(3)
