"""Travel-platform domain model: services, instances, databases, requests.

A ServiceInstance is a pool of concurrency slots with a bounded FIFO
queue. Work enters through admit(), holds a slot until the runtime calls
complete(), and dies with the instance on crash(). Slot-occupancy time is
accrued into busy_time, whose time integral doubles as the utilization
and mean-inflight source for telemetry.

The monolith baseline is one instance of the pseudo-kind ``Monolith``
whose capacity is the sum of the microservice capacities, with a single
shared database.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Protocol

from tripsim.engine import Distribution, SimTime


class ServiceKind(str, enum.Enum):
    """Closed catalog of platform components."""

    USER_MANAGEMENT = "UserManagement"
    FLIGHT_BOOKING = "FlightBooking"
    HOTEL_BOOKING = "HotelBooking"
    PAYMENT_GATEWAY = "PaymentGateway"
    SEARCH_RECOMMENDATIONS = "SearchRecommendations"
    NOTIFICATION_SERVICE = "NotificationService"
    API_GATEWAY = "ApiGateway"
    CONFIGURATION_MANAGEMENT = "ConfigurationManagement"
    LOAD_BALANCER = "LoadBalancer"
    DATABASE = "Database"


# Deployment pool name for the monolith baseline (not a ServiceKind; it is
# a deployment unit, not a catalog component).
MONOLITH = "Monolith"


class InstanceDown(Exception):
    """Work was offered to an instance in the Down state."""


class InstanceState(enum.Enum):
    STARTING = "starting"
    UP = "up"
    DRAINING = "draining"
    DOWN = "down"


@dataclass(frozen=True)
class DbProfile:
    """Database usage of one endpoint call: ``queries`` sequential queries."""

    queries: int
    query_time: Distribution


@dataclass(frozen=True)
class DownstreamCall:
    """Reference to a callee endpoint; consecutive parallel entries fan out."""

    endpoint: str  # "Kind.name"
    parallel: bool = False


@dataclass
class EndpointSpec:
    """One callable endpoint: compute time, db usage, downstream calls.

    ``ledger_action`` marks booking side effects: ("reserve"|"release",
    counter) applied to the reservation ledger when the call completes on
    the callee. ``saga`` names a saga definition executed instead of plain
    downstream calls (gateway entry endpoints only).
    """

    service: str
    name: str
    service_time: Distribution
    cpu_slots: int = 1
    request_bytes: int = 0
    response_bytes: int = 0
    db: DbProfile | None = None
    downstream: list[DownstreamCall] = field(default_factory=list)
    saga: str | None = None
    ledger_action: tuple[str, str] | None = None

    @property
    def ref(self) -> str:
        return f"{self.service}.{self.name}"


@dataclass
class Request:
    """One logical end-to-end request; trace_id spans all of its hops."""

    id: int
    trace_id: int
    cls: str
    created_at: SimTime
    user_key: str
    timeout_at: SimTime | None = None


class SlotJob(Protocol):
    """Work item an instance can host."""

    def on_slot(self, now: SimTime) -> None: ...

    def on_crashed(self, now: SimTime) -> None: ...


class ServiceInstance:
    """A running copy of one service: capacity slots plus a bounded queue."""

    __slots__ = (
        "id", "kind", "index", "capacity", "queue_bound", "state",
        "inflight", "queue", "busy_time", "created_at", "up_at", "down_at",
        "_busy_mark", "max_queue_len", "on_drained",
    )

    def __init__(self, kind: str, index: int, capacity: int, queue_bound: int,
                 now: SimTime, state: InstanceState = InstanceState.UP):
        self.kind = kind
        self.index = index
        self.id = f"{kind.lower()}-{index}"
        self.capacity = capacity
        self.queue_bound = queue_bound
        self.state = state
        self.inflight = 0
        self.queue: deque[SlotJob] = deque()
        self.busy_time: SimTime = 0
        self.created_at = now
        self.up_at: SimTime | None = now if state is InstanceState.UP else None
        self.down_at: SimTime | None = None
        self._busy_mark: SimTime = now
        self.max_queue_len = 0
        self.on_drained = None  # set by the runtime when draining

    def __repr__(self) -> str:
        return f"<{self.id} {self.state.value} inflight={self.inflight} q={len(self.queue)}>"

    def accrue(self, now: SimTime) -> None:
        """Fold elapsed slot occupancy into busy_time up to ``now``."""
        if now > self._busy_mark:
            self.busy_time += self.inflight * (now - self._busy_mark)
            self._busy_mark = now

    def mark_up(self, now: SimTime) -> None:
        self.accrue(now)
        self.state = InstanceState.UP
        self.up_at = now

    # -- admission / completion / crash

    def admit(self, job: SlotJob, now: SimTime) -> str:
        """Offer work: returns "accepted", "queued", or "rejected".

        Accepted work occupies a slot immediately (job.on_slot fires
        synchronously). Draining instances accept nothing new; Down
        instances raise InstanceDown.
        """
        if self.state is InstanceState.DOWN:
            raise InstanceDown(self.id)
        if self.state in (InstanceState.DRAINING, InstanceState.STARTING):
            return "rejected"
        if self.inflight < self.capacity:
            self.accrue(now)
            self.inflight += 1
            job.on_slot(now)
            return "accepted"
        if len(self.queue) < self.queue_bound:
            self.queue.append(job)
            if len(self.queue) > self.max_queue_len:
                self.max_queue_len = len(self.queue)
            return "queued"
        return "rejected"

    def complete(self, now: SimTime) -> None:
        """Release one slot; start the queue head at the same SimTime."""
        self.accrue(now)
        self.inflight -= 1
        assert self.inflight >= 0, f"negative inflight on {self.id}"
        if self.queue:
            job = self.queue.popleft()
            self.inflight += 1
            job.on_slot(now)
        elif (self.state is InstanceState.DRAINING and self.inflight == 0
              and self.on_drained is not None):
            self.state = InstanceState.DOWN
            self.down_at = now
            self.on_drained(self)

    def crash(self, now: SimTime) -> list[SlotJob]:
        """Kill the instance; return every job that was in flight or queued."""
        if self.state is InstanceState.DOWN:
            return []
        self.accrue(now)
        victims: list[SlotJob] = list(self.queue)
        self.queue.clear()
        # In-flight jobs are tracked by the runtime contexts themselves;
        # the caller collects them via its own registry of running work.
        self.state = InstanceState.DOWN
        self.down_at = now
        self.inflight = 0
        return victims

    def start_drain(self, now: SimTime, on_drained) -> None:
        self.accrue(now)
        if self.inflight == 0 and not self.queue:
            self.state = InstanceState.DOWN
            self.down_at = now
            on_drained(self)
        else:
            self.state = InstanceState.DRAINING
            self.on_drained = on_drained

    def load(self) -> int:
        """Busyness metric for least-busy balancing: inflight + queued."""
        return self.inflight + len(self.queue)


class QueryJob(Protocol):
    def on_slot(self, now: SimTime) -> None: ...


class DatabaseModel:
    """Per-service (or shared monolith) database: query slots + FIFO queue.

    Databases add latency under contention but never fail; capacity can be
    squeezed by an overload fault.
    """

    __slots__ = ("owner", "capacity", "inflight", "queue", "busy_time",
                 "_busy_mark", "max_queue_len")

    def __init__(self, owner: str, capacity: int):
        self.owner = owner
        self.capacity = capacity
        self.inflight = 0
        self.queue: deque[QueryJob] = deque()
        self.busy_time: SimTime = 0
        self._busy_mark: SimTime = 0
        self.max_queue_len = 0

    def accrue(self, now: SimTime) -> None:
        if now > self._busy_mark:
            self.busy_time += self.inflight * (now - self._busy_mark)
            self._busy_mark = now

    def admit(self, job: QueryJob, now: SimTime) -> None:
        if self.inflight < self.capacity:
            self.accrue(now)
            self.inflight += 1
            job.on_slot(now)
        else:
            self.queue.append(job)
            if len(self.queue) > self.max_queue_len:
                self.max_queue_len = len(self.queue)

    def complete(self, now: SimTime) -> None:
        self.accrue(now)
        self.inflight -= 1
        assert self.inflight >= 0, f"negative inflight on db {self.owner}"
        if self.queue and self.inflight < self.capacity:
            job = self.queue.popleft()
            self.inflight += 1
            job.on_slot(now)

    def set_capacity(self, capacity: int, now: SimTime) -> None:
        """Resize (fault injection); queued work drains into freed slots."""
        self.accrue(now)
        self.capacity = max(1, capacity)
        while self.queue and self.inflight < self.capacity:
            job = self.queue.popleft()
            self.inflight += 1
            job.on_slot(now)


@dataclass
class DeploymentSpec:
    """Initial deployment: who runs, how many copies, with what capacity."""

    mode: str  # "microservices" | "monolith"
    instances: dict[str, int]
    capacity: dict[str, int]
    queue_bound: int = 64
    db_capacity: dict[str, int] = field(default_factory=dict)
    monolith_restart_us: SimTime = 500_000
    monolith_db_capacity: int = 8

    def total_slots(self) -> int:
        return sum(self.instances[k] * self.capacity[k] for k in self.instances)


@dataclass
class ConservationCounters:
    """End-of-run audit: issued must equal the sum of the other terms."""

    issued: int = 0
    completed: int = 0
    rejected: int = 0
    shed: int = 0
    failed: int = 0
    inflight_at_end: int = 0

    def balanced(self) -> bool:
        return self.issued == (self.completed + self.rejected + self.shed
                               + self.failed + self.inflight_at_end)
