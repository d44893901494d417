"""Deterministic discrete-event kernel.

Time is an integer count of simulated nanoseconds.  Events fire in
(fire_at, sequence) order, where the sequence number is assigned at
scheduling time; this makes every run with the same inputs reproduce the
same dispatch order bit for bit.  Resources are FIFO and non-preemptive:
a request queues at the moment acquire() is called and is granted as soon
as all earlier requests have released.
"""

from __future__ import annotations

import heapq
import random
from typing import Callable

from .errors import EventLimitExceeded, SchedulingInPast

# 64-bit signed headroom; a run must never come near this.
MAX_SIM_NS = (1 << 63) - 1

DEFAULT_EVENT_CAP = 1_000_000_000


class Rng:
    """Seeded pseudo-random source; identical seed, identical draws."""

    def __init__(self, seed: int):
        self.seed = seed
        self._r = random.Random(seed)

    def bits(self, n: int) -> int:
        return self._r.getrandbits(n)

    def randrange(self, n: int) -> int:
        return self._r.randrange(n)

    def shuffle(self, seq: list) -> None:
        self._r.shuffle(seq)

    def spawn(self, salt: int) -> "Rng":
        """Independent child stream, stable under unrelated draw-order changes."""
        return Rng((self.seed * 0x9E3779B97F4A7C15 + salt) & ((1 << 64) - 1))


class Resource:
    """A serially held resource with FIFO service in request order."""

    def __init__(self, name: str, record: bool = False):
        self.name = name
        self.busy_until = 0
        self.utilization_ns = 0
        self.grants = 0
        self.intervals: list[tuple[int, int]] | None = [] if record else None

    def acquire(self, now: int, hold_ns: int) -> int:
        """Queue at `now`, return the grant time (>= now)."""
        if hold_ns <= 0:
            raise ValueError(f"hold_ns must be positive, got {hold_ns}")
        grant = now if now > self.busy_until else self.busy_until
        self.busy_until = grant + hold_ns
        self.utilization_ns += hold_ns
        self.grants += 1
        if self.intervals is not None:
            self.intervals.append((grant, grant + hold_ns))
        return grant


class ResourcePool:
    """Interchangeable resources (e.g. cores); earliest-free wins, ties by index."""

    def __init__(self, name: str, count: int):
        self.members = [Resource(f"{name}{i}") for i in range(count)]

    def __len__(self) -> int:
        return len(self.members)

    def acquire(self, now: int, hold_ns: int) -> int:
        best = self.members[0]
        for m in self.members[1:]:
            if m.busy_until < best.busy_until:
                best = m
        return best.acquire(now, hold_ns)

    @property
    def utilization_ns(self) -> int:
        return sum(m.utilization_ns for m in self.members)


class Kernel:
    """Virtual clock plus event queue.  Single-threaded; never share one
    instance across concurrently running simulations."""

    def __init__(self, seed: int = 0, event_cap: int = DEFAULT_EVENT_CAP):
        self.now = 0
        self.rng = Rng(seed)
        self.event_cap = event_cap
        self.dispatched = 0
        self._seq = 0
        self._queue: list[tuple[int, int, str, Callable[[], None]]] = []
        # called with (fire_at, seq, kind) on every dispatch; used by trace logs
        self.dispatch_hook: Callable[[int, int, str], None] | None = None

    def schedule_at(self, fire_at: int, kind: str, action: Callable[[], None]) -> None:
        if fire_at < self.now:
            raise SchedulingInPast(f"{kind} at {fire_at} < clock {self.now}")
        if fire_at > MAX_SIM_NS:
            raise OverflowError(f"simulated time overflow: {fire_at}")
        heapq.heappush(self._queue, (fire_at, self._seq, kind, action))
        self._seq += 1

    def schedule_in(self, delay: int, kind: str, action: Callable[[], None]) -> None:
        self.schedule_at(self.now + delay, kind, action)

    def run_until_idle(self) -> int:
        """Dispatch everything; returns the final clock.  Idempotent."""
        while self._queue:
            fire_at, seq, kind, action = heapq.heappop(self._queue)
            assert fire_at >= self.now, "event queue broke monotonicity"
            self.now = fire_at
            self.dispatched += 1
            if self.dispatched > self.event_cap:
                raise EventLimitExceeded(f"more than {self.event_cap} events dispatched")
            if self.dispatch_hook is not None:
                self.dispatch_hook(fire_at, seq, kind)
            action()
        return self.now
