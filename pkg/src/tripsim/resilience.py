"""Fault-tolerance suite: circuit breaker, retry, bulkhead, degradation,
and the durable message queue behind asynchronous notification delivery.

The circuit breaker is a count-based sliding window per (caller, callee)
scope. Transitions:

    Closed -> Open       window holds >= min_calls outcomes and the
                         failure fraction >= failure_ratio
    Open -> HalfOpen     open_duration elapsed; up to half_open_probes
                         calls admitted as probes
    HalfOpen -> Closed   that many consecutive probe successes
    HalfOpen -> Open     any probe failure (timer restarts)

While Open, callers fail fast at a fixed small overhead instead of
waiting out timeouts; that bound is what keeps upstream queues from
filling when a dependency dies.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from tripsim.engine import SimTime
from tripsim.telemetry import RETRYABLE, Outcome


class BreakerState(enum.Enum):
    CLOSED = "closed"
    OPEN = "open"
    HALF_OPEN = "half_open"


@dataclass(frozen=True)
class BreakerParams:
    window: int = 20
    min_calls: int = 10
    failure_ratio: float = 0.5
    open_duration_us: SimTime = 5_000_000
    half_open_probes: int = 3


class CircuitBreaker:
    """State machine for one (caller service, callee kind) scope."""

    def __init__(self, params: BreakerParams):
        self.params = params
        self.state = BreakerState.CLOSED
        self.window: deque[bool] = deque(maxlen=params.window)
        self.opened_at: SimTime | None = None
        self.open_seq = 0  # stale-guards scheduled probe-window wakeups
        self.probes_issued = 0
        self.probe_successes = 0

    def _trip_open(self, now: SimTime) -> None:
        self.state = BreakerState.OPEN
        self.opened_at = now
        self.open_seq += 1
        self.window.clear()
        self.probes_issued = 0
        self.probe_successes = 0

    def _enter_half_open(self) -> None:
        self.state = BreakerState.HALF_OPEN
        self.probes_issued = 0
        self.probe_successes = 0

    def allow(self, now: SimTime) -> str:
        """Gate one call: "admit", "probe", or "fast_fail"."""
        if self.state is BreakerState.CLOSED:
            return "admit"
        if self.state is BreakerState.OPEN:
            if now - self.opened_at >= self.params.open_duration_us:
                self._enter_half_open()
            else:
                return "fast_fail"
        # half-open
        if self.probes_issued < self.params.half_open_probes:
            self.probes_issued += 1
            return "probe"
        return "fast_fail"

    def on_probe_window(self, open_seq: int, now: SimTime) -> None:
        """Scheduled wakeup at opened_at + open_duration; stale if re-opened."""
        if self.state is BreakerState.OPEN and self.open_seq == open_seq:
            if now - self.opened_at >= self.params.open_duration_us:
                self._enter_half_open()

    def record(self, success: bool, probe: bool, now: SimTime) -> None:
        """Feed one admitted call's outcome back into the machine.

        Probe outcomes only matter while still half-open (stragglers from
        a superseded probe round are dropped); regular outcomes slide
        through the window and can trip the breaker only when closed.
        """
        if probe:
            if self.state is not BreakerState.HALF_OPEN:
                return
            if success:
                self.probe_successes += 1
                if self.probe_successes >= self.params.half_open_probes:
                    self.state = BreakerState.CLOSED
                    self.window.clear()
            else:
                self._trip_open(now)
            return
        self.window.append(success)
        if self.state is not BreakerState.CLOSED:
            return
        if len(self.window) >= self.params.min_calls:
            failures = sum(1 for ok in self.window if not ok)
            if failures / len(self.window) >= self.params.failure_ratio:
                self._trip_open(now)


def breaker_counts_as_failure(outcome: Outcome) -> bool:
    """Rejections and infrastructure errors trip the breaker; business
    declines do not (they are healthy service, unhappy answer)."""
    if outcome in (Outcome.SUCCESS, Outcome.BUSINESS, Outcome.DEGRADED):
        return False
    return True


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_us: SimTime = 10_000
    backoff_multiplier: float = 2.0
    retryable: frozenset[Outcome] = RETRYABLE

    def backoff_us(self, attempt_no: int) -> SimTime:
        """Delay before attempt ``attempt_no + 1`` (attempts count from 1)."""
        return int(self.backoff_base_us * self.backoff_multiplier ** (attempt_no - 1))

    def should_retry(self, outcome: Outcome, attempt_no: int) -> bool:
        return attempt_no < self.max_attempts and outcome in self.retryable


class Bulkhead:
    """Cap on concurrent outbound calls for one (caller, callee) scope;
    excess fails fast rather than waiting."""

    __slots__ = ("limit", "active", "max_seen")

    def __init__(self, limit: int):
        self.limit = limit
        self.active = 0
        self.max_seen = 0

    def try_acquire(self) -> bool:
        if self.active >= self.limit:
            return False
        self.active += 1
        if self.active > self.max_seen:
            self.max_seen = self.active
        return True

    def release(self) -> None:
        self.active -= 1
        assert self.active >= 0, "bulkhead released below zero"


def degrade_shed_set(p95_ms: float | None, mean_util_pct: float | None,
                     ceiling_ms: float, shed_watermark_pct: float,
                     non_critical: list[str]) -> set[str]:
    """Overload decision: shed every non-critical class while either
    trigger holds; empty set otherwise (no hysteresis)."""
    triggered = False
    if p95_ms is not None and p95_ms > ceiling_ms:
        triggered = True
    if mean_util_pct is not None and mean_util_pct > shed_watermark_pct:
        triggered = True
    return set(non_critical) if triggered else set()


@dataclass
class QueuedMessage:
    id: int
    saga_id: int
    trace_id: int
    endpoint: str
    enqueued_at: SimTime
    deliveries: int = 0


class MessageQueue:
    """Durable at-least-once queue (notification channel).

    Messages persist across consumer crashes: a delivery is acked only on
    completion, and a crash mid-delivery requeues the message at the head.
    """

    def __init__(self):
        self._pending: deque[QueuedMessage] = deque()
        self._inflight: dict[int, QueuedMessage] = {}
        self._next_id = 1
        self.delivered: list[QueuedMessage] = []

    def enqueue(self, saga_id: int, trace_id: int, endpoint: str,
                now: SimTime) -> QueuedMessage:
        msg = QueuedMessage(self._next_id, saga_id, trace_id, endpoint, now)
        self._next_id += 1
        self._pending.append(msg)
        return msg

    def pending_count(self) -> int:
        return len(self._pending)

    def take(self) -> QueuedMessage | None:
        if not self._pending:
            return None
        msg = self._pending.popleft()
        msg.deliveries += 1
        self._inflight[msg.id] = msg
        return msg

    def ack(self, msg_id: int) -> None:
        msg = self._inflight.pop(msg_id)
        self.delivered.append(msg)

    def nack(self, msg_id: int) -> None:
        """Delivery died (consumer crash); message returns to the head."""
        msg = self._inflight.pop(msg_id, None)
        if msg is not None:
            self._pending.appendleft(msg)

    def outstanding(self) -> int:
        return len(self._pending) + len(self._inflight)
