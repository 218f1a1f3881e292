"""Deterministic discrete-event loop, seeded RNG streams and a lossy network."""

from __future__ import annotations

import hashlib
import heapq
import itertools
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from any printable parts (order-sensitive)."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def derive_rng(*parts: Any) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


class Timer:
    __slots__ = ("time", "seq", "fn", "args", "cancelled")

    def __init__(self, time: float, seq: int, fn: Callable, args: tuple):
        self.time = time
        self.seq = seq
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __lt__(self, other: "Timer") -> bool:
        return (self.time, self.seq) < (other.time, other.seq)


class EventLoop:
    """Priority queue of timestamped callbacks; ties fire in scheduling order."""

    def __init__(self, trace: bool = False):
        self.now = 0.0
        self._queue: list[Timer] = []
        self._seq = itertools.count()
        self.tracing = trace
        self.trace_lines: list[str] = []

    def at(self, time: float, fn: Callable, *args) -> Timer:
        if time < self.now:
            time = self.now
        timer = Timer(time, next(self._seq), fn, args)
        heapq.heappush(self._queue, timer)
        return timer

    def after(self, delay: float, fn: Callable, *args) -> Timer:
        return self.at(self.now + delay, fn, *args)

    def trace(self, node: str, kind: str, term: int | str = "-") -> None:
        if self.tracing:
            self.trace_lines.append(f"{self.now:.3f} {node} {kind} {term}")

    def step(self) -> bool:
        while self._queue:
            timer = heapq.heappop(self._queue)
            if timer.cancelled:
                continue
            self.now = timer.time
            timer.fn(*timer.args)
            return True
        return False

    def run(self, until: float | None = None, stop: Callable[[], bool] | None = None) -> None:
        while self._queue:
            if until is not None and self._queue[0].time > until:
                self.now = max(self.now, until)
                return
            if not self.step():
                break
            if stop is not None and stop():
                return
        if until is not None:
            self.now = max(self.now, until)

    def pending(self) -> int:
        return sum(1 for t in self._queue if not t.cancelled)


@dataclass(frozen=True)
class NetworkModel:
    latency_min: float = 1.0
    latency_mode: float = 3.0
    latency_max: float = 10.0
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.latency_min <= self.latency_mode <= self.latency_max:
            raise ValueError("latency bounds must satisfy 0 <= min <= mode <= max")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must lie in [0, 1]")

    @property
    def mean_latency(self) -> float:
        return (self.latency_min + self.latency_mode + self.latency_max) / 3.0

    @property
    def round_trip(self) -> float:
        return 2.0 * self.mean_latency


class Network:
    """Point-to-point links with triangular latency, per-link FIFO delivery.

    Messages marked ``droppable`` are lost with the model's drop probability;
    messages to or from a crashed node are always lost.
    """

    def __init__(self, loop: EventLoop, model: NetworkModel, *stream: Any):
        self.loop = loop
        self.model = model
        self.rng = derive_rng(model.seed, "network", *stream)
        self.down: set[str] = set()
        self._link_clock: dict[tuple[str, str], float] = {}
        self.sent = 0
        self.dropped = 0

    def sample_latency(self) -> float:
        m = self.model
        if m.latency_min == m.latency_max:
            return float(m.latency_min)
        return float(self.rng.triangular(m.latency_min, m.latency_mode, m.latency_max))

    def send(self, src: str, dst: str, handler: Callable, *args, droppable: bool = True) -> float | None:
        """Schedule ``handler(*args)`` at the receiver; returns arrival time or None if lost."""
        self.sent += 1
        delay = self.sample_latency()
        if src in self.down:
            self.dropped += 1
            return None
        if droppable and self.model.drop_probability > 0 and self.rng.random() < self.model.drop_probability:
            self.dropped += 1
            return None
        link = (src, dst)
        arrival = max(self.loop.now + delay, self._link_clock.get(link, 0.0))
        self._link_clock[link] = arrival
        self.loop.at(arrival, self._deliver, dst, handler, args)
        return arrival

    def _deliver(self, dst: str, handler: Callable, args: tuple) -> None:
        if dst in self.down:
            self.dropped += 1
            return
        handler(*args)
