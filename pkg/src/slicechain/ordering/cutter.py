"""Batch cutting: a block is cut when it is full or its oldest entry times out."""

from __future__ import annotations

from typing import Callable, Generic, TypeVar

from ..sim import EventLoop, Timer

T = TypeVar("T")


def cut_block(
    pending: list[T],
    first_arrival: float | None,
    now: float,
    batch_size: int,
    batch_timeout_ms: float,
) -> list[T] | None:
    """Return the batch to cut right now, or None.

    The size rule wins over the timer: a full batch is cut at once. Otherwise
    a non-empty batch is cut once its first entry has waited the timeout.
    Only the first ``batch_size`` entries leave; the caller keeps the rest.
    """
    if not pending:
        return None
    if len(pending) >= batch_size:
        return pending[:batch_size]
    # compare against the deadline itself: the timer fires at exactly that float
    if first_arrival is not None and now >= first_arrival + batch_timeout_ms:
        return list(pending)
    return None


class CuttingStage(Generic[T]):
    """Stateful wrapper around :func:`cut_block` driven by an event loop."""

    def __init__(
        self,
        loop: EventLoop,
        batch_size: int,
        batch_timeout_ms: float,
        emit: Callable[[list[T], float], None],
    ):
        if batch_size < 1 or batch_timeout_ms <= 0:
            raise ValueError("batch_size must be >= 1 and timeout > 0")
        self.loop = loop
        self.batch_size = batch_size
        self.batch_timeout_ms = batch_timeout_ms
        self.emit = emit
        self.pending: list[T] = []
        self.first_arrival: float | None = None
        self._timer: Timer | None = None

    def offer(self, item: T) -> None:
        if not self.pending:
            self.first_arrival = self.loop.now
        self.pending.append(item)
        self._tick()

    def _tick(self) -> None:
        while True:
            batch = cut_block(self.pending, self.first_arrival, self.loop.now,
                              self.batch_size, self.batch_timeout_ms)
            if batch is None:
                break
            self.pending = self.pending[len(batch):]
            # leftovers restart the timer from the cut
            self.first_arrival = self.loop.now if self.pending else None
            self._cancel()
            self.emit(batch, self.loop.now)
        if self.pending and self._timer is None:
            self._timer = self.loop.at(self.first_arrival + self.batch_timeout_ms, self._expire)

    def _expire(self) -> None:
        self._timer = None
        self._tick()

    def _cancel(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    def drain(self) -> list[T]:
        """Remove and return everything pending without cutting."""
        items, self.pending, self.first_arrival = self.pending, [], None
        self._cancel()
        return items
