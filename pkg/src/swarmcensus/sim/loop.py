"""Single-threaded discrete-event loop with virtual time.

Events are ordered by (time, sequence number), so two runs that schedule the
same events in the same order replay identically.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable


class Handle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class EventLoop:
    def __init__(self, start: float = 0.0):
        self.now = start
        self._queue: list = []
        self._seq = itertools.count()
        self.processed = 0

    def time(self) -> float:
        return self.now

    def call_at(self, when: float, callback: Callable, *args) -> Handle:
        h = Handle()
        heapq.heappush(self._queue, (max(when, self.now), next(self._seq), h, callback, args))
        return h

    def call_later(self, delay: float, callback: Callable, *args) -> Handle:
        return self.call_at(self.now + max(0.0, delay), callback, *args)

    def run_until(self, deadline: float, stop: Callable[[], bool] | None = None) -> None:
        q = self._queue
        while q and q[0][0] <= deadline:
            when, _, h, cb, args = heapq.heappop(q)
            if h.cancelled:
                continue
            self.now = when
            self.processed += 1
            cb(*args)
            if stop is not None and stop():
                return
        self.now = max(self.now, deadline)

    def run_until_idle(self, limit: float = float("inf"), stop: Callable[[], bool] | None = None) -> None:
        self.run_until(limit, stop)

    def pending(self) -> int:
        return sum(1 for e in self._queue if not e[2].cancelled)
