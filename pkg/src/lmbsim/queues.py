"""Timestamped FIFO wires used between pipeline stages.

Every hop between components takes at least one cycle.  A producer pushes an
item with the cycle at which it becomes visible to the consumer; the consumer
pops only items whose ready time has arrived.  `head_ready` feeds the engine's
skip-ahead: the earliest ready time across all wires bounds the next cycle at
which anything can happen.
"""

from collections import deque

INF = float("inf")


class TimedFifo:
    __slots__ = ("_q",)

    def __init__(self):
        self._q = deque()

    def push(self, ready, item):
        # In-order delivery: ready times must be monotone per wire.
        if self._q and ready < self._q[-1][0]:
            ready = self._q[-1][0]
        self._q.append((ready, item))

    def pop(self, now):
        """Item at the head if it is ready by `now`, else None."""
        if self._q and self._q[0][0] <= now:
            return self._q.popleft()[1]
        return None

    def peek(self, now):
        if self._q and self._q[0][0] <= now:
            return self._q[0][1]
        return None

    def head_ready(self):
        """Cycle at which the head becomes visible; INF when empty."""
        return self._q[0][0] if self._q else INF

    def __len__(self):
        return len(self._q)

    def __bool__(self):
        return bool(self._q)

    def __iter__(self):
        return iter(self._q)
