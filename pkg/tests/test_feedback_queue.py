import random
import threading

import pytest

from emspipe.errors import QueueClosed
from emspipe.feedback import PriorityFeedbackQueue
from emspipe.wire import FeedbackKind, FeedbackMessage


def msg(kind, window_id, label="x"):
    return FeedbackMessage(kind, window_id, label, 0.5, 0)


class TwoQueueModel:
    """Reference model: two FIFOs, protocol first."""

    def __init__(self):
        self.protocol = []
        self.intervention = []

    def put(self, m):
        (self.protocol if m.kind is FeedbackKind.PROTOCOL else self.intervention).append(m)

    def get(self):
        if self.protocol:
            return self.protocol.pop(0)
        if self.intervention:
            return self.intervention.pop(0)
        return None


class TestPriorityQueue:
    def test_protocol_jumps_ahead(self):
        q = PriorityFeedbackQueue()
        q.put(msg(FeedbackKind.INTERVENTION, 1))
        q.put(msg(FeedbackKind.PROTOCOL, 1))
        assert q.get().kind is FeedbackKind.PROTOCOL
        assert q.get().kind is FeedbackKind.INTERVENTION

    def test_fifo_within_kind(self):
        q = PriorityFeedbackQueue()
        q.put(msg(FeedbackKind.PROTOCOL, 1))
        q.put(msg(FeedbackKind.PROTOCOL, 2))
        assert q.get().window_id == 1
        assert q.get().window_id == 2

    def test_closed_queue_rejects_put(self):
        q = PriorityFeedbackQueue()
        q.close()
        with pytest.raises(QueueClosed):
            q.put(msg(FeedbackKind.PROTOCOL, 1))

    def test_close_drains_then_returns_none(self):
        q = PriorityFeedbackQueue()
        q.put(msg(FeedbackKind.INTERVENTION, 1))
        q.close()
        assert q.get().window_id == 1
        assert q.get() is None

    def test_get_timeout_returns_none(self):
        q = PriorityFeedbackQueue()
        assert q.get(timeout=0.01) is None

    def test_receipts_increase(self):
        q = PriorityFeedbackQueue()
        receipts = [q.put(msg(FeedbackKind.PROTOCOL, i)) for i in range(5)]
        assert receipts == sorted(receipts)
        assert len(set(receipts)) == 5

    def test_randomized_against_two_queue_model(self):
        rng = random.Random(0xC0FFEE)
        q = PriorityFeedbackQueue()
        model = TwoQueueModel()
        pending = 0
        for i in range(1000):
            if pending and rng.random() < 0.4:
                assert q.get() == model.get()
                pending -= 1
            else:
                m = msg(rng.choice(list(FeedbackKind)), i)
                q.put(m)
                model.put(m)
                pending += 1
        while pending:
            assert q.get() == model.get()
            pending -= 1
        q.close()
        assert q.get() is None

    def test_blocking_get_wakes_on_put(self):
        q = PriorityFeedbackQueue()
        out = []
        t = threading.Thread(target=lambda: out.append(q.get(timeout=2)))
        t.start()
        q.put(msg(FeedbackKind.PROTOCOL, 42))
        t.join(timeout=2)
        assert not t.is_alive()
        assert out[0].window_id == 42
