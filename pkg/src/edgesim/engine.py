"""Deterministic discrete-event kernel: virtual clock, event queue, seeded RNG, pacing."""

from __future__ import annotations

import hashlib
import heapq
import queue
import random as _random
import time as _wall
from dataclasses import dataclass, field
from typing import Any, Callable


class ScheduleInPastError(ValueError):
    """Raised when an event is scheduled before the current virtual time."""

    def __init__(self, fire_time: float, now: float) -> None:
        super().__init__(f"cannot schedule event at t={fire_time} (clock is at t={now})")
        self.fire_time = fire_time
        self.now = now


class EventHandlerError(RuntimeError):
    """Wraps an exception raised inside an event handler, naming the event."""


@dataclass(order=True)
class SimEvent:
    """A scheduled event, totally ordered by (fire_time, sequence)."""

    fire_time: float
    sequence: int
    label: str = field(compare=False, default="")
    action: Callable[[], None] = field(compare=False, default=lambda: None)
    cancelled: bool = field(compare=False, default=False)


class EventHandle:
    """Cancellation handle returned by Engine.schedule."""

    def __init__(self, event: SimEvent) -> None:
        self._event = event

    @property
    def fire_time(self) -> float:
        return self._event.fire_time

    @property
    def cancelled(self) -> bool:
        return self._event.cancelled

    def cancel(self) -> None:
        self._event.cancelled = True


class RandomSource:
    """Seeded deterministic uniform stream.

    Substreams are derived from (seed, label) via SHA-256 so adding a consumer
    never perturbs the draws seen by existing ones.
    """

    def __init__(self, seed: int, label: str = "root") -> None:
        self.seed = seed
        self.label = label
        self._rng = _random.Random(seed)

    def substream(self, label: str) -> "RandomSource":
        digest = hashlib.sha256(f"{self.seed}:{label}".encode()).digest()
        child_seed = int.from_bytes(digest[:8], "big")
        return RandomSource(child_seed, label)

    def uniform(self) -> float:
        """Next value in [0, 1)."""
        return self._rng.random()


def draw_uniform(source: RandomSource) -> float:
    return source.uniform()


RUNNING = "running"
PAUSED = "paused"


class SimClock:
    """Virtual clock with a real-time pacing factor (0 = free-running)."""

    def __init__(self, pace: float = 0.0) -> None:
        self.now = 0.0
        self.pace = pace
        self.state = RUNNING


class Engine:
    """Single-executor event loop.

    All simulation state is mutated from inside event dispatches on the caller's
    thread. External inputs (operator commands, pace changes) arrive on a
    thread-safe queue and are drained only at event boundaries, so handlers never
    observe half-applied commands.
    """

    # Wall-clock slice used while paced or paused, keeps command latency bounded.
    POLL_INTERVAL = 0.02

    def __init__(self, seed: int = 0, pace: float = 0.0, keep_log: bool = False) -> None:
        self.clock = SimClock(pace)
        self.random = RandomSource(seed)
        self._queue: list[SimEvent] = []
        self._next_seq = 0
        self._commands: "queue.Queue[tuple[Callable[[], Any], Callable[[Any], None] | None]]" = queue.Queue()
        self.keep_log = keep_log
        self.log: list[str] = []
        self._boundary_hooks: list[Callable[[], None]] = []
        self.stop_requested = False
        # Wall/virtual anchors for pacing; reset on resume and pace changes so
        # sleep overshoot never accumulates across events.
        self._wall_anchor = 0.0
        self._virtual_anchor = 0.0

    @property
    def now(self) -> float:
        return self.clock.now

    def schedule(self, delay: float, action: Callable[[], None], label: str = "") -> EventHandle:
        """Schedule `action` to run `delay` seconds from now. Ties fire in FIFO order."""
        return self.schedule_at(self.clock.now + delay, action, label)

    def schedule_at(self, fire_time: float, action: Callable[[], None], label: str = "") -> EventHandle:
        if fire_time < self.clock.now:
            raise ScheduleInPastError(fire_time, self.clock.now)
        event = SimEvent(fire_time, self._next_seq, label, action)
        self._next_seq += 1
        heapq.heappush(self._queue, event)
        return EventHandle(event)

    def submit_command(self, fn: Callable[[], Any], on_done: Callable[[Any], None] | None = None) -> None:
        """Thread-safe: run `fn` at the next event boundary; `on_done` gets its result."""
        self._commands.put((fn, on_done))

    def add_boundary_hook(self, hook: Callable[[], None]) -> None:
        """Hook invoked after every dispatched event (used by telemetry publishers)."""
        self._boundary_hooks.append(hook)

    def drain_commands(self) -> None:
        while True:
            try:
                fn, on_done = self._commands.get_nowait()
            except queue.Empty:
                return
            result = fn()
            if on_done is not None:
                on_done(result)

    def _reanchor(self) -> None:
        self._wall_anchor = _wall.monotonic()
        self._virtual_anchor = self.clock.now

    def _pace_wait(self, target_virtual: float) -> None:
        """Sleep until the wall clock catches up with `target_virtual`, draining
        commands along the way (so pauses and operator actions stay responsive)."""
        while not self.stop_requested:
            self.drain_commands()
            if self.clock.state == PAUSED:
                _wall.sleep(self.POLL_INTERVAL)
                continue
            pace = self.clock.pace
            if pace <= 0:
                return
            due = self._wall_anchor + (target_virtual - self._virtual_anchor) / pace
            remaining = due - _wall.monotonic()
            if remaining <= 0:
                return
            _wall.sleep(min(remaining, self.POLL_INTERVAL))

    def run_until(self, t_end: float) -> None:
        """Process every event with fire_time <= t_end, then set the clock to t_end."""
        if t_end < self.clock.now:
            raise ScheduleInPastError(t_end, self.clock.now)
        self._reanchor()
        while self._queue and not self.stop_requested:
            event = self._queue[0]
            if event.cancelled:
                heapq.heappop(self._queue)
                continue
            if event.fire_time > t_end:
                break
            if self.clock.pace > 0 or self.clock.state == PAUSED:
                self._pace_wait(event.fire_time)
            else:
                self.drain_commands()
            if self.stop_requested:
                break
            # A drained command may have scheduled an earlier event or cancelled
            # this one; re-evaluate the heap top before dispatching.
            if self._queue[0] is not event:
                continue
            heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self.clock.now = event.fire_time
            if self.keep_log:
                self.log.append(f"{event.fire_time!r} #{event.sequence} {event.label}")
            try:
                event.action()
            except Exception as exc:  # pragma: no cover - diagnostic path
                raise EventHandlerError(
                    f"event '{event.label}' at t={event.fire_time} failed: {exc}"
                ) from exc
            for hook in self._boundary_hooks:
                hook()
        if not self.stop_requested:
            if self.clock.pace > 0 or self.clock.state == PAUSED:
                self._pace_wait(t_end)
            else:
                self.drain_commands()
            self.clock.now = max(self.clock.now, t_end)

    def pause(self) -> None:
        self.clock.state = PAUSED

    def resume(self) -> None:
        self.clock.state = RUNNING
        self._reanchor()

    def set_pace(self, pace: float) -> None:
        if pace < 0:
            raise ValueError(f"pace must be >= 0, got {pace}")
        self.clock.pace = pace
        self._reanchor()
