"""Deterministic discrete-event core.

One global virtual clock (integer microseconds), a single event queue with
FIFO tie-breaking, per-node drifting local clocks, and named seeded RNG
streams. Everything else in the simulator runs on top of this module.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Callable


class SimulationError(Exception):
    """Base class for simulator-level errors."""


class PastEventError(SimulationError):
    """An event was scheduled before the current virtual time.

    This always indicates a protocol-logic bug, never a recoverable state.
    """


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 64-bit seed derived from a master seed plus arbitrary labels.

    Uses SHA-256 so derivation is identical across processes and platforms
    (the builtin hash() is salted per process and must not be used here).
    """
    h = hashlib.sha256()
    h.update(str(master_seed).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode())
    return int.from_bytes(h.digest()[:8], "big")


@dataclass(frozen=True)
class NodeClock:
    """Affine local clock: local(t) = offset_us + t * (1 + drift_ppm/1e6).

    drift_ppm is the constant rate deviation of this node's crystal;
    offset_us is the phase error at global t=0. The exact (unrounded)
    conversions are used wherever sub-microsecond alignment matters,
    e.g. concurrent-transmission timing.
    """

    node_id: int
    drift_ppm: float = 0.0
    offset_us: int = 0

    @property
    def rate(self) -> float:
        return 1.0 + self.drift_ppm / 1e6

    def local_exact(self, global_us: float) -> float:
        return self.offset_us + global_us * self.rate

    def local_time(self, global_us: float) -> int:
        """Local microseconds, rounded to the nearest tick."""
        return round(self.local_exact(global_us))

    def global_exact(self, local_us: float) -> float:
        return (local_us - self.offset_us) / self.rate

    def global_time(self, local_us: float) -> int:
        return round(self.global_exact(local_us))

    def global_elapsed(self, local_duration_us: float) -> float:
        """Global duration corresponding to a duration of the local crystal."""
        return local_duration_us / self.rate


@dataclass
class Event:
    """A queued callback. Equal fire_at values run in insertion (seq) order."""

    fire_at: int
    seq: int
    callback: Callable[[], None] = field(compare=False)
    kind: str = ""
    target: int | None = None
    canceled: bool = False


class Simulator:
    """Single-threaded event engine with one virtual clock.

    run_until(t_end) is inclusive of t_end: an event at exactly t_end is
    processed, and now() equals t_end afterwards.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.now: int = 0
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = itertools.count()
        self._rngs: dict[str, random.Random] = {}

    def schedule_at(self, fire_at: float, callback: Callable[[], None], *,
                    kind: str = "", target: int | None = None) -> Event:
        fire_at = round(fire_at)
        if fire_at < self.now:
            raise PastEventError(
                f"event {kind!r} at t={fire_at} is in the past (now={self.now})")
        ev = Event(fire_at, next(self._seq), callback, kind, target)
        heapq.heappush(self._heap, (ev.fire_at, ev.seq, ev))
        return ev

    def schedule_in(self, delay_us: float, callback: Callable[[], None], *,
                    kind: str = "", target: int | None = None) -> Event:
        return self.schedule_at(self.now + delay_us, callback, kind=kind, target=target)

    def cancel(self, event: Event) -> None:
        event.canceled = True

    def run_until(self, t_end: int) -> int:
        """Process every event with fire_at <= t_end; leave now() == t_end."""
        if t_end < self.now:
            raise PastEventError(f"run_until({t_end}) before now={self.now}")
        processed = 0
        while self._heap and self._heap[0][0] <= t_end:
            _, _, ev = heapq.heappop(self._heap)
            if ev.canceled:
                continue
            self.now = ev.fire_at
            ev.callback()
            processed += 1
        self.now = t_end
        return processed

    def rng(self, stream_id: str) -> random.Random:
        """Named deterministic RNG stream (per node, per purpose).

        Streams are derived from the master seed, mutually decorrelated,
        and identical across runs with the same seed.
        """
        gen = self._rngs.get(stream_id)
        if gen is None:
            gen = random.Random(derive_seed(self.seed, stream_id))
            self._rngs[stream_id] = gen
        return gen
