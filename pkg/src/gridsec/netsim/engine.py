"""Deterministic event queue: events run in (time, insertion order)."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Callable


class SchedulingError(ValueError):
    pass


@dataclass(order=True)
class SimEvent:
    time: float
    seq: int
    kind: str = field(compare=False)
    action: Callable[[], Any] = field(compare=False, repr=False)
    scheduled_at: float = field(compare=False, default=0.0)


class EventQueue:
    def __init__(self):
        self._heap: list[SimEvent] = []
        self._seq = 0
        self.now = 0.0

    def __len__(self):
        return len(self._heap)

    def schedule(self, time: float, kind: str, action: Callable[[], Any]) -> SimEvent:
        if time < self.now:
            raise SchedulingError(f"cannot schedule {kind!r} at t={time} before now={self.now}")
        ev = SimEvent(float(time), self._seq, kind, action, self.now)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> SimEvent:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def peek_time(self) -> float | None:
        return self._heap[0].time if self._heap else None
