"""Deterministic virtual-time event loop.

Time is an integer count of microseconds. Events are ordered by
``(fire_at, seq)`` where ``seq`` is a per-simulator insertion counter, so
two runs fed the same inputs process events in exactly the same order.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Any, Callable

USEC = 1
MSEC = 1_000
SEC = 1_000_000


def seconds(value: float) -> int:
    """Convert seconds to integer ticks (rounded to the nearest microsecond)."""
    return int(round(value * SEC))


def millis(value: float) -> int:
    return int(round(value * MSEC))


def to_seconds(ticks: int) -> float:
    return ticks / SEC


class PastEvent(ValueError):
    """Raised when scheduling an event before the current virtual time."""


@dataclass
class RunConfig:
    duration: int = 120 * SEC
    seed: int = 0
    queue_sample_interval: int = 10 * MSEC

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.queue_sample_interval <= 0:
            raise ValueError("queue_sample_interval must be positive")


@dataclass
class RunStats:
    events_processed: int
    final_time: int


class EventHandle:
    """Returned by :meth:`Simulator.schedule`; lets the caller cancel."""

    __slots__ = ("fire_at", "seq", "action", "args", "cancelled", "label")

    def __init__(self, fire_at: int, seq: int, action: Callable, args: tuple, label: str):
        self.fire_at = fire_at
        self.seq = seq
        self.action = action
        self.args = args
        self.cancelled = False
        self.label = label

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """Single-threaded discrete-event scheduler.

    Handlers are plain callables invoked as ``action(*args)``. A handler may
    schedule further events at or after :attr:`now`.

    If ``record_log`` is set, every processed event appends
    ``(fire_at, seq, label)`` to :attr:`log`; used to check that replays are
    byte-identical.
    """

    def __init__(self, seed: int = 0, record_log: bool = False):
        self.now = 0
        self._seq = 0
        self._heap: list[tuple[int, int, EventHandle]] = []
        self.rng = random.Random(seed)
        self.record_log = record_log
        self.log: list[tuple[int, int, str]] = []
        self.events_processed = 0

    def schedule(self, fire_at: int, action: Callable, *args: Any, label: str = "") -> EventHandle:
        if fire_at < self.now:
            raise PastEvent(f"event at {fire_at} us scheduled at now={self.now} us")
        handle = EventHandle(int(fire_at), self._seq, action, args, label)
        self._seq += 1
        heapq.heappush(self._heap, (handle.fire_at, handle.seq, handle))
        return handle

    def schedule_in(self, delay: int, action: Callable, *args: Any, label: str = "") -> EventHandle:
        return self.schedule(self.now + delay, action, *args, label=label)

    def pending(self) -> int:
        return sum(1 for _, _, h in self._heap if not h.cancelled)

    def peek_time(self) -> int | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def run_until(self, t_end: int) -> RunStats:
        """Process every event with ``fire_at <= t_end`` (inclusive boundary).

        On return the clock is ``t_end``; events later than ``t_end`` stay
        queued for a subsequent call.
        """
        heap = self._heap
        processed = 0
        while heap:
            if heap[0][0] > t_end:
                break
            head = heapq.heappop(heap)[2]
            if head.cancelled:
                continue
            self.now = head.fire_at
            if self.record_log:
                self.log.append((head.fire_at, head.seq, head.label))
            head.action(*head.args)
            processed += 1
        if t_end > self.now:
            self.now = t_end
        self.events_processed += processed
        return RunStats(events_processed=processed, final_time=self.now)
