"""Single-threaded discrete-event network core.

All protocol time flows through this clock: identical (seed, scenario) pairs
replay an identical event trace, bit for bit.  Events dequeue in (time,
sequence) order; the sequence number breaks ties deterministically.

Frames on a link are delivered reliably and in order, after the link latency
plus a serialization delay proportional to frame size, unless the link's
drop rate swallows them.  A dropped frame has no observable effect.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..errors import ParamError, UnknownNode
from ..wire import frame_name

Handler = Callable[[int, bytes], None]

ADVERSARY_BEHAVIORS = ("none", "drop_all", "drop_queries", "corrupt_blocks", "ledger_amnesia")


@dataclass(frozen=True)
class AdversarySpec:
    """Which misbehavior a fraction of nodes adopts, and from when."""

    behavior: str = "none"
    fraction: float = 0.0
    start_ms: float = 0.0

    def __post_init__(self):
        if self.behavior not in ADVERSARY_BEHAVIORS:
            raise ParamError(f"unknown adversary behavior {self.behavior!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ParamError("adversary fraction must lie in [0, 1]")


@dataclass
class ScenarioConfig:
    """Parsed scenario file; see :func:`parse_scenario` for the text format."""

    seed: int = 0
    nodes: int = 8
    difficulty: int = 0
    bootstrap_r: int = 2
    latency_ms: str = "10"
    drop_rate: float = 0.0
    bytes_per_ms: float = 1000.0
    adversary: str = "none"
    adversary_fraction: float = 0.0
    adversary_start_ms: float = 0.0
    horizon_ms: float = 600_000.0
    extras: dict = field(default_factory=dict)

    def adversary_spec(self) -> AdversarySpec:
        return AdversarySpec(self.adversary, self.adversary_fraction, self.adversary_start_ms)

    def to_text(self) -> str:
        lines = []
        for key in ("seed", "nodes", "difficulty", "bootstrap_r", "latency_ms",
                    "drop_rate", "bytes_per_ms", "adversary", "adversary_fraction",
                    "adversary_start_ms", "horizon_ms"):
            lines.append(f"{key} = {getattr(self, key)}")
        for key in sorted(self.extras):
            lines.append(f"{key} = {self.extras[key]}")
        return "\n".join(lines) + "\n"


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse ``key = value`` lines; '#' starts a comment, unknown keys kept."""
    cfg = ScenarioConfig()
    converters = {
        "seed": int, "nodes": int, "difficulty": int, "bootstrap_r": int,
        "latency_ms": str, "drop_rate": float, "bytes_per_ms": float,
        "adversary": str, "adversary_fraction": float,
        "adversary_start_ms": float, "horizon_ms": float,
    }
    for raw_line in text.splitlines():
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamError(f"scenario line without '=': {raw_line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in converters:
            setattr(cfg, key, converters[key](value))
        else:
            cfg.extras[key] = value
    return cfg


class TimerHandle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class _Link:
    latency: float
    drop: float
    busy_until: float = 0.0


class SimNet:
    """The event loop; owns time, randomness, links and the delivery trace."""

    def __init__(self, seed: int = 0, latency_ms: float = 10.0,
                 drop_rate: float = 0.0, bytes_per_ms: float = 1000.0,
                 latency_spec: Optional[str] = None):
        self.rng = random.Random(seed)
        self.now = 0.0
        self.bytes_per_ms = bytes_per_ms
        self.default_latency = latency_ms
        self.default_drop = drop_rate
        self._latency_spec = latency_spec
        self._events: list = []
        self._seq = 0
        self._handlers: dict[int, Handler] = {}
        self._links: dict[tuple[int, int], _Link] = {}
        self.trace: list[tuple[float, int, int, str, int]] = []

    # -- wiring -----------------------------------------------------------

    def register(self, addr: int, handler: Handler) -> None:
        self._handlers[addr] = handler

    def unregister(self, addr: int) -> None:
        self._handlers.pop(addr, None)

    def addresses(self) -> list[int]:
        return sorted(self._handlers)

    def set_link(self, src: int, dst: int, latency: Optional[float] = None,
                 drop: Optional[float] = None) -> None:
        link = self._link(src, dst)
        if latency is not None:
            link.latency = latency
        if drop is not None:
            link.drop = drop

    def _link(self, src: int, dst: int) -> _Link:
        key = (src, dst)
        link = self._links.get(key)
        if link is None:
            latency = self.default_latency
            if self._latency_spec and self._latency_spec.startswith("uniform:"):
                lo, hi = (float(x) for x in self._latency_spec[8:].split(","))
                latency = self.rng.uniform(lo, hi)
            link = _Link(latency, self.default_drop)
            self._links[key] = link
        return link

    # -- scheduling ---------------------------------------------------------

    def schedule(self, delay: float, fn: Callable[[], None]) -> TimerHandle:
        handle = TimerHandle()
        self._push(self.now + max(delay, 0.0), ("timer", fn, handle))
        return handle

    def send(self, src: int, dst: int, frame: bytes) -> None:
        """Queue a frame for delivery; raises UnknownNode for a bad target."""
        if dst not in self._handlers:
            raise UnknownNode(f"no node at sim address {dst}")
        link = self._link(src, dst)
        if link.drop > 0.0 and self.rng.random() < link.drop:
            return
        start = max(self.now, link.busy_until)
        link.busy_until = start + len(frame) / self.bytes_per_ms
        self._push(link.busy_until + link.latency, ("frame", src, dst, frame))

    def _push(self, when: float, event) -> None:
        self._seq += 1
        heapq.heappush(self._events, (when, self._seq, event))

    # -- running ------------------------------------------------------------

    def _dispatch(self, event) -> None:
        if event[0] == "timer":
            _, fn, handle = event
            if not handle.cancelled:
                fn()
            return
        _, src, dst, frame = event
        handler = self._handlers.get(dst)
        if handler is None:
            return  # node left after the frame was queued
        self.trace.append((self.now, src, dst, frame_name(frame), len(frame)))
        handler(src, frame)

    def run_until(self, t: float) -> None:
        """Process events with time <= t, then advance the clock to t."""
        while self._events and self._events[0][0] <= t:
            when, _, event = heapq.heappop(self._events)
            self.now = when
            self._dispatch(event)
        self.now = max(self.now, t)

    def run_while(self, cond: Callable[[], bool], t_max: float) -> bool:
        """Step events until ``cond()`` holds, time passes ``t_max`` or the
        queue drains; returns the final truth of ``cond``."""
        while not cond() and self._events and self._events[0][0] <= t_max:
            when, _, event = heapq.heappop(self._events)
            self.now = when
            self._dispatch(event)
        return cond()

    def run_until_quiescent(self, max_events: int = 10_000_000) -> int:
        """Drain the queue; returns the number of events processed."""
        count = 0
        while self._events:
            when, _, event = heapq.heappop(self._events)
            self.now = when
            self._dispatch(event)
            count += 1
            if count >= max_events:
                raise RuntimeError(f"simulation did not quiesce in {max_events} events")
        return count

    # -- trace ----------------------------------------------------------------

    def trace_lines(self) -> list[str]:
        return [
            f"{t:.3f}\t{src}\t{dst}\t{kind}\t{size}"
            for t, src, dst, kind, size in self.trace
        ]

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for line in self.trace_lines():
            h.update(line.encode("ascii"))
            h.update(b"\n")
        return h.hexdigest()
