"""Media clock with timer scheduling.

In virtual mode time only moves through :meth:`MediaClock.advance` (or
:meth:`MediaClock.run`, which advances to each pending timer in turn). In
real mode ``now`` follows the monotonic wall clock and timers fire from
:meth:`MediaClock.run` as their due times pass.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .types import Timestamp


class ClockUsageError(RuntimeError):
    pass


@dataclass(order=True)
class Timer:
    due: int
    priority: int
    seq: int
    fn: Callable = field(compare=False)
    args: tuple = field(compare=False, default=())
    cancelled: bool = field(compare=False, default=False)

    def cancel(self) -> None:
        self.cancelled = True


class MediaClock:
    """Shared time source for every component of a run.

    Timers are ordered by due time, then priority (lower first), then
    registration order, so replays are deterministic.
    """

    def __init__(self, mode: str = "virtual", start_ms: int = 0):
        if mode not in ("virtual", "real"):
            raise ValueError(f"unknown clock mode {mode!r}")
        self.mode = mode
        self._now = int(start_ms)
        self._heap: list[Timer] = []
        self._seq = itertools.count()
        self._cond = threading.Condition(threading.RLock())
        self._wall_origin = time.monotonic() - start_ms / 1000.0
        self.fired = 0

    @property
    def is_virtual(self) -> bool:
        return self.mode == "virtual"

    @property
    def now_ms(self) -> int:
        if self.mode == "real":
            with self._cond:
                wall = int((time.monotonic() - self._wall_origin) * 1000)
                self._now = max(self._now, wall)
        return self._now

    @property
    def now(self) -> Timestamp:
        return Timestamp(self.now_ms)

    def call_at(self, due_ms: int, fn: Callable, *args: Any, priority: int = 0) -> Timer:
        with self._cond:
            due = max(int(due_ms), self._now)
            timer = Timer(due, priority, next(self._seq), fn, args)
            heapq.heappush(self._heap, timer)
            self._cond.notify_all()
        return timer

    def call_later(self, delay_ms: int, fn: Callable, *args: Any, priority: int = 0) -> Timer:
        if delay_ms < 0:
            raise ValueError(f"negative delay {delay_ms}")
        return self.call_at(self.now_ms + int(delay_ms), fn, *args, priority=priority)

    def call_soon(self, fn: Callable, *args: Any, priority: int = 0) -> Timer:
        return self.call_at(self._now, fn, *args, priority=priority)

    def pending(self) -> int:
        with self._cond:
            return sum(1 for t in self._heap if not t.cancelled)

    def next_due(self) -> int | None:
        with self._cond:
            self._drop_cancelled()
            return self._heap[0].due if self._heap else None

    def _drop_cancelled(self) -> None:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)

    def _pop_due(self, limit: int) -> Timer | None:
        with self._cond:
            self._drop_cancelled()
            if self._heap and self._heap[0].due <= limit:
                timer = heapq.heappop(self._heap)
                self._now = max(self._now, timer.due)
                return timer
            return None

    def advance(self, delta_ms: int) -> Timestamp:
        """Move virtual time forward by ``delta_ms``, firing due timers in order."""
        if self.mode != "virtual":
            raise ClockUsageError("advance() is only valid on a virtual clock")
        if isinstance(delta_ms, bool) or int(delta_ms) != delta_ms:
            raise TypeError(f"delta must be integer milliseconds, got {delta_ms!r}")
        if delta_ms < 0:
            raise ValueError(f"cannot advance by a negative delta ({delta_ms})")
        target = self._now + int(delta_ms)
        while (timer := self._pop_due(target)) is not None:
            self.fired += 1
            timer.fn(*timer.args)
        with self._cond:
            self._now = target
        return Timestamp(target)

    def run(self, until_ms: int | None = None, idle_timeout_s: float = 0.05) -> Timestamp:
        """Fire timers until none remain (or ``until_ms`` is reached).

        In virtual mode this jumps straight to each due time. In real mode it
        sleeps until timers are due, and returns once the heap has stayed
        empty for ``idle_timeout_s``.
        """
        if self.mode == "virtual":
            while True:
                nxt = self.next_due()
                if nxt is None or (until_ms is not None and nxt > until_ms):
                    break
                self.advance(nxt - self._now)
            if until_ms is not None and until_ms > self._now:
                self.advance(until_ms - self._now)
            return self.now
        idle_since = None
        while True:
            now = self.now_ms
            if until_ms is not None and now >= until_ms:
                break
            timer = self._pop_due(now)
            if timer is not None:
                idle_since = None
                self.fired += 1
                timer.fn(*timer.args)
                continue
            with self._cond:
                nxt = self._heap[0].due if self._heap else None
                if nxt is None:
                    idle_since = idle_since or time.monotonic()
                    if time.monotonic() - idle_since >= idle_timeout_s:
                        break
                    self._cond.wait(idle_timeout_s / 4)
                else:
                    idle_since = None
                    self._cond.wait(max(0.0, (nxt - now) / 1000.0))
        return self.now
