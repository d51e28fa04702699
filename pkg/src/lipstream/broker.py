"""In-process message broker.

Queues are FIFO with a byte budget, per-consumer prefetch and manual
acknowledgement. Failed deliveries are retried with geometric backoff and
end up in ``<name>.dlq`` once the attempt budget is spent. All timing goes
through the shared :class:`MediaClock`.
"""

from __future__ import annotations

import dataclasses
import itertools
import struct
import threading
import uuid as uuidlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable

from .core.clock import MediaClock
from .core.process import Event
from .core.types import SegmentId, Timestamp

MiB = 1 << 20
JOURNAL_MAGIC = b"LSQ1"
KIND_PUBLISH, KIND_ACK, KIND_DLQ = 0, 1, 2


class BrokerError(RuntimeError):
    pass


class UndeclaredQueue(BrokerError):
    pass


class MessageTooLarge(BrokerError):
    pass


class SettlementError(BrokerError):
    pass


@dataclass(frozen=True)
class Envelope:
    key: str
    payload: bytes
    size: int
    segment_id: SegmentId
    published_at: Timestamp
    delivery_count: int = 1


@dataclass(frozen=True)
class QueueConfig:
    name: str
    byte_budget: int = 256 * MiB
    prefetch: int = 2
    max_attempts: int = 3
    backoff_base: int = 100
    backoff_factor: float = 2.0

    def __post_init__(self):
        if self.prefetch < 1:
            raise ValueError("prefetch must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.byte_budget <= 0:
            raise ValueError("byte_budget must be positive")
        if self.backoff_factor <= 1:
            raise ValueError("backoff_factor must be > 1")
        if self.backoff_base < 0:
            raise ValueError("backoff_base must be >= 0")

    def backoff_ms(self, delivery_count: int) -> int:
        return int(round(self.backoff_base * self.backoff_factor ** (delivery_count - 1)))


@dataclass(frozen=True)
class QueueStats:
    depth: int
    bytes_used: int
    in_flight: int
    dead_lettered: int


@dataclass(eq=False)
class Delivery:
    token: int
    envelope: Envelope
    consumer: str
    queue: str
    settled: bool = False


# journals -------------------------------------------------------------------


class NullJournal:
    def record(self, kind: int, seg: uuidlib.UUID, ts_ms: int, payload: bytes = b"") -> None:
        pass

    def close(self) -> None:
        pass


class FileJournal:
    """Append-only journal: ``LSQ1`` then one record per publish/ack/dlq."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self._fh: BinaryIO = open(self.path, "ab")
        if fresh:
            self._fh.write(JOURNAL_MAGIC)
            self._fh.flush()
        self._lock = threading.Lock()

    def record(self, kind: int, seg: uuidlib.UUID, ts_ms: int, payload: bytes = b"") -> None:
        body = struct.pack("<B", kind) + seg.bytes + struct.pack("<Q", ts_ms) + payload
        with self._lock:
            self._fh.write(struct.pack("<I", len(body)) + body)
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()


@dataclass(frozen=True)
class JournalRecord:
    kind: int
    segment: uuidlib.UUID
    ts_ms: int
    payload: bytes


def read_journal(data: bytes) -> list[JournalRecord]:
    if data[:4] != JOURNAL_MAGIC:
        raise BrokerError("journal does not start with LSQ1 magic")
    out, pos = [], 4
    while pos < len(data):
        if pos + 4 > len(data):
            raise BrokerError(f"truncated journal record header at byte offset {pos}")
        (n,) = struct.unpack_from("<I", data, pos)
        if n < 25 or pos + 4 + n > len(data):
            raise BrokerError(f"truncated or malformed journal record at byte offset {pos}")
        body = data[pos + 4 : pos + 4 + n]
        kind = body[0]
        seg = uuidlib.UUID(bytes=bytes(body[1:17]))
        (ts,) = struct.unpack_from("<Q", body, 17)
        out.append(JournalRecord(kind, seg, ts, bytes(body[25:])))
        pos += 4 + n
    return out


def unsettled_records(records: list[JournalRecord]) -> list[JournalRecord]:
    """Publishes that were never acked or dead-lettered, in publish order."""
    pending: dict[uuidlib.UUID, deque[JournalRecord]] = {}
    order: list[JournalRecord] = []
    for rec in records:
        if rec.kind == KIND_PUBLISH:
            pending.setdefault(rec.segment, deque()).append(rec)
            order.append(rec)
        elif rec.segment in pending and pending[rec.segment]:
            settled = pending[rec.segment].popleft()
            order.remove(settled)
    return order


# queue state ----------------------------------------------------------------


@dataclass(eq=False)
class _Consumer:
    cid: str
    waiting: deque = field(default_factory=deque)
    in_flight: int = 0


class _Queue:
    def __init__(self, cfg: QueueConfig, journal):
        self.cfg = cfg
        self.journal = journal
        self.ready: deque[Envelope] = deque()
        self.delayed = 0
        self.in_flight = 0
        self.bytes_used = 0
        self.dead_lettered = 0
        self.consumers: dict[str, _Consumer] = {}
        self.rotation: list[str] = []
        self.blocked: deque[tuple[Envelope, Event]] = deque()
        self.high_water = 0

    @property
    def depth(self) -> int:
        return len(self.ready) + self.delayed + self.in_flight


class Broker:
    """Thread-safe broker. Callbacks and event wake-ups always run via the clock."""

    def __init__(self, clock: MediaClock, journal_dir: str | Path | None = None):
        self.clock = clock
        self.journal_dir = Path(journal_dir) if journal_dir is not None else None
        self._queues: dict[str, _Queue] = {}
        self._lock = threading.RLock()
        self._tokens = itertools.count(1)
        self._dead_letter_listeners: list[Callable[[str, Envelope], None]] = []

    # declaration

    def declare(self, cfg: QueueConfig | str, **overrides) -> QueueConfig:
        if isinstance(cfg, str):
            cfg = QueueConfig(cfg, **overrides)
        elif overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        with self._lock:
            if cfg.name in self._queues:
                return self._queues[cfg.name].cfg
            self._queues[cfg.name] = _Queue(cfg, self._make_journal(cfg.name))
            dlq = cfg.name + ".dlq"
            if not cfg.name.endswith(".dlq") and dlq not in self._queues:
                # dead-lettering must never block, so the DLQ budget is effectively unbounded
                self._queues[dlq] = _Queue(QueueConfig(dlq, byte_budget=1 << 62), self._make_journal(dlq))
        return cfg

    def _make_journal(self, name: str):
        if self.journal_dir is None:
            return NullJournal()
        self.journal_dir.mkdir(parents=True, exist_ok=True)
        return FileJournal(self.journal_dir / f"{name}.lsq")

    def queues(self) -> list[str]:
        with self._lock:
            return list(self._queues)

    def config(self, name: str) -> QueueConfig:
        return self._q(name).cfg

    def _q(self, name: str) -> _Queue:
        try:
            return self._queues[name]
        except KeyError:
            raise UndeclaredQueue(f"queue {name!r} is not declared") from None

    def on_dead_letter(self, cb: Callable[[str, Envelope], None]) -> None:
        self._dead_letter_listeners.append(cb)

    # publishing

    def publish(self, queue: str, payload: bytes, segment_id: SegmentId, size: int | None = None) -> Event:
        """Enqueue a message. The returned event fires once the message is accepted.

        If the queue is over budget the message waits (FIFO with other
        blocked publishers) until acknowledgements free enough space.
        """
        size = len(payload) if size is None else int(size)
        with self._lock:
            q = self._q(queue)
            if size > q.cfg.byte_budget:
                raise MessageTooLarge(
                    f"message of {size} bytes exceeds the {q.cfg.byte_budget}-byte budget of {queue!r}"
                )
            env = Envelope(queue, bytes(payload), size, segment_id, self.clock.now, 1)
            done = Event(self.clock)
            if not q.blocked and q.bytes_used + size <= q.cfg.byte_budget:
                self._accept(q, env, done)
            else:
                q.blocked.append((env, done))
        return done

    def _accept(self, q: _Queue, env: Envelope, done: Event) -> None:
        env = dataclasses.replace(env, published_at=self.clock.now)
        q.bytes_used += env.size
        q.high_water = max(q.high_water, q.bytes_used)
        q.ready.append(env)
        q.journal.record(KIND_PUBLISH, env.segment_id.uuid, env.published_at.millis, env.payload)
        done.succeed(env)
        self._dispatch(q)

    def _admit_blocked(self, q: _Queue) -> None:
        while q.blocked and q.bytes_used + q.blocked[0][0].size <= q.cfg.byte_budget:
            env, done = q.blocked.popleft()
            self._accept(q, env, done)

    # consuming

    def register(self, queue: str, consumer: str) -> None:
        with self._lock:
            q = self._q(queue)
            if consumer not in q.consumers:
                q.consumers[consumer] = _Consumer(consumer)
                q.rotation.append(consumer)

    def consume(self, queue: str, consumer: str) -> Event:
        """Request the next message; the event fires with a :class:`Delivery`."""
        with self._lock:
            q = self._q(queue)
            if consumer not in q.consumers:
                raise BrokerError(f"consumer {consumer!r} is not registered on {queue!r}")
            ev = Event(self.clock)
            q.consumers[consumer].waiting.append(ev)
            self._dispatch(q)
        return ev

    def cancel(self, queue: str, consumer: str) -> None:
        with self._lock:
            self._q(queue).consumers[consumer].waiting.clear()

    def _dispatch(self, q: _Queue) -> None:
        while q.ready:
            for i, cid in enumerate(q.rotation):
                c = q.consumers[cid]
                if c.waiting and c.in_flight < q.cfg.prefetch:
                    break
            else:
                return
            q.rotation.append(q.rotation.pop(i))
            env = q.ready.popleft()
            c.in_flight += 1
            q.in_flight += 1
            delivery = Delivery(next(self._tokens), env, cid, q.cfg.name)
            c.waiting.popleft().succeed(delivery)

    # settlement

    def _settle(self, d: Delivery) -> _Queue:
        if d.settled:
            raise SettlementError(f"delivery {d.token} was already settled")
        q = self._q(d.queue)
        d.settled = True
        q.consumers[d.consumer].in_flight -= 1
        q.in_flight -= 1
        return q

    def ack(self, d: Delivery) -> None:
        with self._lock:
            q = self._settle(d)
            q.bytes_used -= d.envelope.size
            q.journal.record(KIND_ACK, d.envelope.segment_id.uuid, self.clock.now_ms)
            self._admit_blocked(q)
            self._dispatch(q)

    def nack(self, d: Delivery) -> None:
        with self._lock:
            q = self._settle(d)
            dc = d.envelope.delivery_count
            if dc >= q.cfg.max_attempts:
                self._dead_letter(q, d.envelope)
            else:
                q.delayed += 1
                again = dataclasses.replace(d.envelope, delivery_count=dc + 1)
                self.clock.call_later(q.cfg.backoff_ms(dc), self._redeliver, q, again)
            self._dispatch(q)

    def reject(self, d: Delivery) -> None:
        """Dead-letter immediately, without retry."""
        with self._lock:
            q = self._settle(d)
            self._dead_letter(q, d.envelope)
            self._dispatch(q)

    def _redeliver(self, q: _Queue, env: Envelope) -> None:
        with self._lock:
            q.delayed -= 1
            q.ready.appendleft(env)
            self._dispatch(q)

    def _dead_letter(self, q: _Queue, env: Envelope) -> None:
        q.bytes_used -= env.size
        q.dead_lettered += 1
        q.journal.record(KIND_DLQ, env.segment_id.uuid, self.clock.now_ms)
        dlq = self._queues.get(q.cfg.name + ".dlq")
        if dlq is not None:
            moved = dataclasses.replace(env, key=dlq.cfg.name)
            dlq.bytes_used += moved.size
            dlq.high_water = max(dlq.high_water, dlq.bytes_used)
            dlq.ready.append(moved)
            dlq.journal.record(KIND_PUBLISH, moved.segment_id.uuid, self.clock.now_ms, moved.payload)
            self._dispatch(dlq)
        for cb in self._dead_letter_listeners:
            self.clock.call_soon(cb, q.cfg.name, env)
        self._admit_blocked(q)

    # introspection

    def stats(self, queue: str) -> QueueStats:
        with self._lock:
            q = self._q(queue)
            return QueueStats(q.depth, q.bytes_used, q.in_flight, q.dead_lettered)

    def high_water(self, queue: str) -> int:
        with self._lock:
            return self._q(queue).high_water

    def blocked_publishers(self, queue: str) -> int:
        with self._lock:
            return len(self._q(queue).blocked)

    def peek_dlq(self, queue: str) -> list[Envelope]:
        with self._lock:
            return list(self._q(queue + ".dlq").ready)

    def recover(self, queue: str, records: list[JournalRecord]) -> int:
        """Re-publish journal records that were never settled; returns the count."""
        q = self._q(queue)
        journal, q.journal = q.journal, NullJournal()  # already on disk
        try:
            count = 0
            for rec in unsettled_records(records):
                seg = SegmentId(rec.segment, Timestamp(rec.ts_ms))
                self.publish(queue, rec.payload, seg)
                count += 1
        finally:
            q.journal = journal
        return count

    def close(self) -> None:
        with self._lock:
            for q in self._queues.values():
                q.journal.close()


def queue_stats(broker: Broker, queue: str) -> QueueStats:
    return broker.stats(queue)
