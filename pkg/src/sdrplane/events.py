"""Tiny publish/subscribe bus for drop, link and reconfiguration events."""

from __future__ import annotations

import queue
import threading
import time


class EventBus:
    def __init__(self, maxsize: int = 1024) -> None:
        self._subs: list[queue.Queue] = []
        self._lock = threading.Lock()
        self._maxsize = maxsize
        self.published = 0

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(self._maxsize)
        with self._lock:
            self._subs.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subs:
                self._subs.remove(q)

    def publish(self, kind: str, /, **fields) -> None:
        record = {"event": kind, "time": time.time(), **fields}
        with self._lock:
            subs = list(self._subs)
            self.published += 1
        for q in subs:
            try:
                q.put_nowait(record)
            except queue.Full:  # slow subscribers lose events, publishers never block
                pass
