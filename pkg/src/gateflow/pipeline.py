"""Unbounded-or-bounded MPMC FIFO used between listeners and slots.

The queue is the two-pointer linked-list design built on single-word
compare-and-swap: head and tail each live in a versioned reference and
every successful swap bumps a modification counter, so a swap presented
with a stale counter fails even when the node reference matches (the
classic reuse hazard). CPython has no hardware CAS, so the primitive
emulates one word with a tuple swapped under a private lock; readers
load the tuple without locking, which the GIL makes atomic. All
higher-level lock-freedom claims are relative to that primitive.
"""

from __future__ import annotations

import threading
from enum import Enum
from typing import Any, Iterable


class EnqueueResult(Enum):
    ACCEPTED = "accepted"
    BACKPRESSURE = "backpressure"


class VersionedRef:
    """A reference plus a monotonically increasing modification counter.

    ``load`` returns the (node, counter) pair that must be handed back
    to ``compare_and_swap``; the swap succeeds only if *both* still
    match. Counters never run backwards, so a node that was removed and
    re-linked cannot satisfy a stale expectation.
    """

    __slots__ = ("_state", "_lock")

    def __init__(self, node: Any = None) -> None:
        self._state = (node, 0)
        self._lock = threading.Lock()

    def load(self) -> tuple[Any, int]:
        return self._state

    def compare_and_swap(self, expected_node: Any, expected_counter: int, new_node: Any) -> bool:
        with self._lock:
            node, counter = self._state
            if node is expected_node and counter == expected_counter:
                self._state = (new_node, counter + 1)
                return True
            return False


class _Node:
    __slots__ = ("payload", "next")

    def __init__(self, payload: Any) -> None:
        self.payload = payload
        self.next = VersionedRef(None)


class LockFreeQueue:
    """FIFO safe for any number of producer and consumer threads.

    ``capacity=None`` makes the queue unbounded. With a capacity set,
    ``enqueue`` returns BACKPRESSURE instead of growing past it; the
    bound is enforced by reserving space before linking the node, so
    the element count can never overshoot.
    """

    def __init__(self, capacity: int | None = None) -> None:
        if capacity is not None and capacity < 0:
            raise ValueError("capacity must be non-negative or None")
        dummy = _Node(None)
        self._head = VersionedRef(dummy)
        self._tail = VersionedRef(dummy)
        self._capacity = capacity
        self._reserved = 0
        self._reserve_lock = threading.Lock()

    # -- producers ---------------------------------------------------

    def enqueue(self, item: Any) -> EnqueueResult:
        if item is None:
            raise ValueError("queue items may not be None")
        if self._capacity is not None:
            with self._reserve_lock:
                if self._reserved >= self._capacity:
                    return EnqueueResult.BACKPRESSURE
                self._reserved += 1
        node = _Node(item)
        tail_ref = self._tail
        while True:
            tail, tcnt = tail_ref.load()
            nxt, ncnt = tail.next.load()
            if (tail, tcnt) != tail_ref.load():
                continue
            if nxt is None:
                if tail.next.compare_and_swap(None, ncnt, node):
                    # swing tail; a concurrent helper may have done it
                    tail_ref.compare_and_swap(tail, tcnt, node)
                    return EnqueueResult.ACCEPTED
            else:
                # tail is lagging: help it forward and retry
                tail_ref.compare_and_swap(tail, tcnt, nxt)

    # -- consumers ---------------------------------------------------

    def dequeue(self) -> Any | None:
        head_ref = self._head
        tail_ref = self._tail
        while True:
            head, hcnt = head_ref.load()
            tail, tcnt = tail_ref.load()
            nxt, _ = head.next.load()
            if (head, hcnt) != head_ref.load():
                continue
            if head is tail:
                if nxt is None:
                    return None
                tail_ref.compare_and_swap(tail, tcnt, nxt)
            else:
                value = nxt.payload
                if head_ref.compare_and_swap(head, hcnt, nxt):
                    nxt.payload = None  # new dummy should not pin the item
                    if self._capacity is not None:
                        with self._reserve_lock:
                            self._reserved -= 1
                    return value

    def drain_up_to(self, max_items: int) -> list:
        """Dequeue at most ``max_items``; equivalent to repeated dequeue."""
        if max_items < 0:
            raise ValueError("max_items must be >= 0")
        out = []
        append = out.append
        dequeue = self.dequeue
        for _ in range(max_items):
            item = dequeue()
            if item is None:
                break
            append(item)
        return out

    # -- observers ---------------------------------------------------

    def approx_len(self) -> int:
        """Cheap size estimate: exact when quiescent, otherwise off by
        at most the number of in-flight operations."""
        if self._capacity is not None:
            return self._reserved
        # every enqueue bumps the tail counter exactly once (possibly
        # via a helper), every dequeue bumps the head counter once
        _, tcnt = self._tail.load()
        _, hcnt = self._head.load()
        return max(0, tcnt - hcnt)

    def extend(self, items: Iterable[Any]) -> int:
        """Enqueue items until exhausted or backpressured; returns count."""
        n = 0
        for item in items:
            if self.enqueue(item) is EnqueueResult.BACKPRESSURE:
                break
            n += 1
        return n
