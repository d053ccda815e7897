"""Deterministic discrete-event network simulator.

Time is integer simulated milliseconds. Every random choice (delay jitter,
drops) comes from one seeded generator consumed in event order, so a seed,
a config and a fault script fully determine the trace.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ConfigurationError, RoutingError

SECOND = 1_000


@dataclass(frozen=True)
class NetConfig:
    seed: int = 0
    base_delay: int = 100
    jitter: int = 0
    drop_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ConfigurationError("drop_rate must lie in [0, 1]")
        if self.base_delay < 0 or self.jitter < 0:
            raise ConfigurationError("delays must be non-negative")


@dataclass(frozen=True, order=True)
class Event:
    deliver_at: int
    seq: int
    destination: str = field(compare=False)
    source: str = field(compare=False)
    payload: Any = field(compare=False)
    kind: str = field(compare=False, default="msg")

    def trace_line(self) -> str:
        name = getattr(self.payload, "trace_name", type(self.payload).__name__)
        return f"{self.deliver_at} {self.seq} {self.kind} {self.source}->{self.destination} {name}"


@dataclass(frozen=True)
class FaultDirective:
    action: str
    node: str
    t: int
    until: int | None = None


def parse_fault_script(text: str) -> list:
    """Parse ``crash <node> <t>``, ``recover <node> <t>`` and
    ``byzantine-audit <node> <t1> <t2>`` lines. ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] in ("crash", "recover") and len(parts) == 3:
                out.append(FaultDirective(parts[0], parts[1], int(parts[2])))
            elif parts[0] == "byzantine-audit" and len(parts) == 4:
                out.append(FaultDirective(parts[0], parts[1], int(parts[2]), int(parts[3])))
            else:
                raise ValueError
        except ValueError:
            raise ConfigurationError(f"fault script line {lineno}: cannot parse {raw!r}") from None
    return out


class Clock:
    def __init__(self, now: int = 0):
        self.now = now


class Network:
    """Single-threaded event loop with point-to-point and broadcast delivery.

    Handlers are ``handler(event)`` callables registered per node id.
    Crashed nodes neither receive messages nor fire timers.
    """

    def __init__(self, config: NetConfig | None = None):
        self.config = config or NetConfig()
        self.clock = Clock()
        self.rng = random.Random(self.config.seed)
        self._queue: list[Event] = []
        self._seq = 0
        self._handlers: dict[str, Callable] = {}
        self._down: set = set()
        self._on_recover: dict[str, Callable] = {}
        self.trace: list[str] = []

    @property
    def now(self) -> int:
        return self.clock.now

    @property
    def nodes(self) -> list:
        return sorted(self._handlers)

    def register(self, node_id: str, handler: Callable, on_recover: Callable | None = None) -> None:
        self._handlers[node_id] = handler
        if on_recover is not None:
            self._on_recover[node_id] = on_recover

    def is_up(self, node_id: str) -> bool:
        return node_id not in self._down

    def _push(self, at: int, dst: str, src: str, payload, kind: str) -> None:
        self._seq += 1
        heapq.heappush(self._queue, Event(at, self._seq, dst, src, payload, kind))

    def _delay(self) -> int:
        c = self.config
        d = c.base_delay
        if c.jitter:
            d += self.rng.randint(-c.jitter, c.jitter)
        return max(0, d)

    def send(self, src: str, dst: str, payload) -> None:
        if dst not in self._handlers:
            raise RoutingError(f"unknown destination {dst!r}")
        if self.config.drop_rate and self.rng.random() < self.config.drop_rate:
            self.trace.append(f"{self.now} - drop {src}->{dst} {type(payload).__name__}")
            return
        self._push(self.now + self._delay(), dst, src, payload, "msg")

    def broadcast(self, src: str, payload, targets=None) -> None:
        for dst in (sorted(targets) if targets is not None else self.nodes):
            if dst != src:
                self.send(src, dst, payload)

    def control(self, src: str, dst: str, payload, at: int | None = None) -> None:
        """Lossless zero-delay delivery for consortium configuration messages."""
        if dst not in self._handlers:
            raise RoutingError(f"unknown destination {dst!r}")
        self._push(self.now if at is None else at, dst, src, payload, "ctl")

    def timer(self, node_id: str, at: int, payload) -> None:
        if at < self.now:
            raise ValueError("timers cannot fire in the past")
        self._push(at, node_id, node_id, payload, "timer")

    def apply_faults(self, directives) -> None:
        for d in directives:
            if d.action == "crash":
                self._push(d.t, d.node, "fault", "crash", "fault")
            elif d.action == "recover":
                self._push(d.t, d.node, "fault", "recover", "fault")

    def run_until(self, t_end: int) -> list:
        """Process every event with ``deliver_at <= t_end``; returns their trace lines."""
        out = []
        while self._queue and self._queue[0].deliver_at <= t_end:
            ev = heapq.heappop(self._queue)
            # causality: the clock only moves forward
            assert ev.deliver_at >= self.clock.now
            self.clock.now = ev.deliver_at
            if ev.kind == "fault":
                if ev.payload == "crash":
                    self._down.add(ev.destination)
                else:
                    self._down.discard(ev.destination)
                    if ev.destination in self._on_recover:
                        self._on_recover[ev.destination]()
                line = f"{ev.deliver_at} {ev.seq} fault {ev.payload} {ev.destination}"
            elif ev.destination in self._down:
                line = ev.trace_line() + " lost-node-down"
            else:
                line = ev.trace_line()
                self._handlers[ev.destination](ev)
            out.append(line)
            self.trace.append(line)
        self.clock.now = max(self.clock.now, t_end)
        return out

    def advance_to(self, t: int) -> list:
        """Process events strictly before ``t`` and leave the clock at ``t``."""
        out = self.run_until(t - 1)
        self.clock.now = max(self.clock.now, t)
        return out
