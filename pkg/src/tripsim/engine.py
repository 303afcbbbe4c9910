"""Deterministic discrete-event engine: clock, ordered queue, seeded streams.

Time is integer microseconds throughout the simulator; floating point
appears only inside samplers and report aggregation, never in the clock.
Events fire in (fire_at, seq) order where seq is the insertion counter,
so simultaneous events dispatch in the order they were scheduled and a
given (scenario, seed) pair always replays the identical event log.

One Engine instance is strictly single-threaded; independent engines may
run concurrently (nothing is shared).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from tripsim._backend import EventHeap, RandomCore, hash64, mix64

# SimTime is an int count of microseconds.
SimTime = int

US = 1
MS = 1000
SECOND = 1_000_000


def ms(value: float) -> SimTime:
    """Milliseconds to SimTime (rounds to whole microseconds)."""
    return int(round(value * MS))


def seconds(value: float) -> SimTime:
    return int(round(value * SECOND))


class SimError(Exception):
    """Base for simulator errors."""


class SchedulingInPast(SimError):
    """An event was scheduled before the current clock."""


class InvalidDistribution(SimError):
    """A distribution parameter was zero or negative."""


class InvariantViolation(SimError):
    """A runtime self-check failed; the run is not trustworthy."""


# --------------------------------------------------------------------------
# Service-time distributions


@dataclass(frozen=True)
class Deterministic:
    value_us: int

    def validate(self) -> None:
        if self.value_us <= 0:
            raise InvalidDistribution(f"deterministic value must be positive, got {self.value_us}")


@dataclass(frozen=True)
class Exponential:
    mean_us: int

    def validate(self) -> None:
        if self.mean_us <= 0:
            raise InvalidDistribution(f"exponential mean must be positive, got {self.mean_us}")


@dataclass(frozen=True)
class Uniform:
    lo_us: int
    hi_us: int

    def validate(self) -> None:
        if self.lo_us <= 0 or self.hi_us <= 0:
            raise InvalidDistribution("uniform bounds must be positive")
        if self.hi_us < self.lo_us:
            raise InvalidDistribution(f"uniform bounds reversed: [{self.lo_us}, {self.hi_us}]")


Distribution = Deterministic | Exponential | Uniform


class RandomStream:
    """Named, independently seeded random stream.

    The stream state is derived from (root_seed, label) with fixed 64-bit
    hashing, so adding a new consumer with its own label never perturbs
    the draws of any other stream, and (root_seed, label, draw index)
    identifies a value across runs.
    """

    __slots__ = ("label", "_core")

    def __init__(self, root_seed: int, label: str):
        self.label = label
        self._core = RandomCore(mix64(root_seed ^ hash64(label.encode("utf-8"))))

    @property
    def draws(self) -> int:
        return self._core.draws

    def next_u64(self) -> int:
        return self._core.next_u64()

    def uniform_double(self) -> float:
        """Double in [0, 1); consumes one draw."""
        return self._core.uniform_double()

    def exponential_us(self, mean_us: int) -> SimTime:
        return self._core.exponential_us(mean_us)

    def uniform_us(self, lo_us: int, hi_us: int) -> SimTime:
        return self._core.uniform_us(lo_us, hi_us)

    def sample(self, dist: Distribution) -> SimTime:
        """Draw a SimTime from ``dist`` (Deterministic consumes no state)."""
        dist.validate()
        if type(dist) is Deterministic:
            return dist.value_us
        if type(dist) is Exponential:
            return self._core.exponential_us(dist.mean_us)
        return self._core.uniform_us(dist.lo_us, dist.hi_us)


# --------------------------------------------------------------------------
# Event payloads. The dispatcher routes on the payload type; every payload
# carries all the state its handler needs.


@dataclass(slots=True)
class RequestArrival:
    request: Any


@dataclass(slots=True)
class HopComplete:
    ctx: Any
    stage: str
    marker: int = 0


@dataclass(slots=True)
class HeartbeatTick:
    instance_id: str


@dataclass(slots=True)
class HeartbeatDeadline:
    instance_id: str
    beat_count: int


@dataclass(slots=True)
class FaultInject:
    fault: Any


@dataclass(slots=True)
class FaultClear:
    fault: Any


@dataclass(slots=True)
class ScaleEvaluate:
    kind: Any


@dataclass(slots=True)
class InstanceReady:
    instance_id: str


@dataclass(slots=True)
class ConfigUpdate:
    key: str
    value: Any


@dataclass(slots=True)
class BreakerProbeWindow:
    breaker_key: Any
    open_seq: int


@dataclass(slots=True)
class WorkloadTick:
    generator: Any
    token: int = 0


@dataclass(slots=True)
class MessageDeliver:
    delivery: Any
    message_id: int


@dataclass(slots=True)
class CallTimeout:
    attempt: Any
    marker: int = 0


@dataclass(slots=True)
class RetryFire:
    call: Any
    attempt_no: int


@dataclass(slots=True)
class MetricsTick:
    index: int


@dataclass(slots=True)
class DegradeEvaluate:
    index: int


@dataclass(frozen=True)
class Event:
    """A scheduled occurrence; exposed for logs and tests."""

    fire_at: SimTime
    seq: int
    payload: Any


class Engine:
    """Single-threaded event loop with a monotonic integer clock."""

    def __init__(self, root_seed: int = 0):
        self.root_seed = root_seed
        self.now: SimTime = 0
        self._heap = EventHeap()
        self._seq = 0
        self._handlers: dict[type, Callable[[Any], None]] = {}
        self._streams: dict[str, RandomStream] = {}
        self.dispatch_count = 0
        # Optional (fire_at, seq, payload type name) trace for determinism checks.
        self.record_log: list[tuple[int, int, str]] | None = None

    # -- scheduling

    def schedule_at(self, fire_at: SimTime, payload: Any) -> int:
        """Enqueue ``payload`` to fire at absolute time ``fire_at``."""
        if fire_at < self.now:
            raise SchedulingInPast(f"fire_at {fire_at} < clock {self.now}")
        seq = self._seq
        self._seq = seq + 1
        self._heap.push(fire_at, seq, payload)
        return seq

    def schedule_in(self, delay: SimTime, payload: Any) -> int:
        return self.schedule_at(self.now + delay, payload)

    def schedule(self, event: Event) -> int:
        """Spec-shaped entry point: enqueue a prebuilt Event (seq reassigned)."""
        return self.schedule_at(event.fire_at, event.payload)

    # -- dispatch

    def register(self, payload_type: type, handler: Callable[[Any], None]) -> None:
        self._handlers[payload_type] = handler

    def run(self, until: SimTime | None = None) -> int:
        """Dispatch every event with fire_at <= until, in (fire_at, seq) order.

        With ``until=None`` the queue is drained and the clock rests at the
        last event time; otherwise the clock lands exactly on ``until``.
        Returns the number of dispatches performed.
        """
        heap = self._heap
        handlers = self._handlers
        log = self.record_log
        dispatched = 0
        while len(heap) > 0:
            t = heap.min_time()
            if until is not None and t > until:
                break
            fire_at, seq, payload = heap.pop()
            if fire_at < self.now:
                raise InvariantViolation(
                    f"event at {fire_at} dispatched after clock reached {self.now}")
            self.now = fire_at
            if log is not None:
                log.append((fire_at, seq, type(payload).__name__))
            handlers[type(payload)](payload)
            dispatched += 1
        if until is not None and until > self.now:
            self.now = until
        self.dispatch_count += dispatched
        return dispatched

    # -- randomness

    def stream(self, label: str) -> RandomStream:
        """Memoized per-label stream seeded from (root_seed, label)."""
        st = self._streams.get(label)
        if st is None:
            st = RandomStream(self.root_seed, label)
            self._streams[label] = st
        return st
