"""Priority queue for outbound feedback.

Protocol feedback always dequeues before intervention feedback regardless of
arrival order; within a kind, order is FIFO. This is what gets the hard-SLO
protocol messages onto the wire ahead of best-effort vision results.
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Optional

from .errors import QueueClosed
from .wire import FeedbackKind, FeedbackMessage


class PriorityFeedbackQueue:
    def __init__(self):
        self._protocol: deque[FeedbackMessage] = deque()
        self._intervention: deque[FeedbackMessage] = deque()
        self._cond = threading.Condition()
        self._closed = False
        self._receipts = 0

    def put(self, msg: FeedbackMessage) -> int:
        """Enqueue a message; returns a monotonically increasing receipt."""
        with self._cond:
            if self._closed:
                raise QueueClosed("feedback queue is closed")
            if msg.kind is FeedbackKind.PROTOCOL:
                self._protocol.append(msg)
            else:
                self._intervention.append(msg)
            self._receipts += 1
            self._cond.notify()
            return self._receipts

    def get(self, timeout: Optional[float] = None) -> Optional[FeedbackMessage]:
        """Dequeue respecting priority.

        Returns None when the queue is closed and fully drained, or when the
        timeout elapses with nothing available.
        """
        with self._cond:
            while not self._protocol and not self._intervention:
                if self._closed:
                    return None
                if not self._cond.wait(timeout=timeout):
                    return None
            if self._protocol:
                return self._protocol.popleft()
            return self._intervention.popleft()

    def close(self) -> None:
        """Stop accepting messages; pending ones remain retrievable."""
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    def __len__(self) -> int:
        with self._cond:
            return len(self._protocol) + len(self._intervention)
