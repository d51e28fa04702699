"""Cooperative processes on top of :class:`MediaClock`.

A process is a generator. It yields an ``int`` to sleep that many
milliseconds, an :class:`Event` to wait for it, or :data:`LATE` to resume at
the current instant after every ordinary timer already due now.
"""

from __future__ import annotations

import logging
from typing import Any, Callable, Generator

from .clock import MediaClock

log = logging.getLogger(__name__)

LATE_PRIORITY = 1


class _Late:
    def __repr__(self) -> str:
        return "LATE"


LATE = _Late()


class Event:
    """One-shot notification carrying a value.

    Callbacks are always run through the clock, never inline, so whoever
    triggers the event can safely hold locks while doing so.
    """

    __slots__ = ("clock", "triggered", "value", "_callbacks")

    def __init__(self, clock: MediaClock):
        self.clock = clock
        self.triggered = False
        self.value: Any = None
        self._callbacks: list[Callable[[Any], None]] = []

    def succeed(self, value: Any = None) -> Event:
        if self.triggered:
            raise RuntimeError("event already triggered")
        self.triggered = True
        self.value = value
        callbacks, self._callbacks = self._callbacks, []
        for cb in callbacks:
            self.clock.call_soon(cb, value)
        return self

    def add_callback(self, cb: Callable[[Any], None]) -> None:
        if self.triggered:
            self.clock.call_soon(cb, self.value)
        else:
            self._callbacks.append(cb)


class ProcessError(RuntimeError):
    pass


class Process:
    def __init__(self, clock: MediaClock, gen: Generator, name: str = "process"):
        self.clock = clock
        self.name = name
        self._gen = gen
        self.done = Event(clock)
        self.error: BaseException | None = None
        clock.call_soon(self._resume, None)

    @property
    def alive(self) -> bool:
        return not self.done.triggered

    def _resume(self, value: Any) -> None:
        try:
            target = self._gen.send(value)
        except StopIteration as stop:
            self.done.succeed(stop.value)
            return
        except Exception as exc:
            self.error = exc
            log.error("process %s crashed: %s", self.name, exc)
            self.done.succeed(None)
            raise ProcessError(f"process {self.name!r} crashed") from exc
        if isinstance(target, Event):
            target.add_callback(self._resume)
        elif target is LATE:
            self.clock.call_soon(self._resume, None, priority=LATE_PRIORITY)
        elif isinstance(target, int) and not isinstance(target, bool):
            if target < 0:
                raise ProcessError(f"process {self.name!r} yielded negative delay {target}")
            self.clock.call_later(target, self._resume, None)
        else:
            raise ProcessError(f"process {self.name!r} yielded unsupported {target!r}")


def spawn(clock: MediaClock, gen: Generator, name: str = "process") -> Process:
    return Process(clock, gen, name)


def timeout(clock: MediaClock, delay_ms: int, value: Any = None) -> Event:
    ev = Event(clock)
    clock.call_later(delay_ms, ev.succeed, value)
    return ev
