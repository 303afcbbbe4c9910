"""Gateway routing table, load-balancing policies, consistent-hash ring.

pick() is a pure function of (policy state, candidate list, request key):
round-robin advances a cursor deterministically, least-busy compares
inflight+queue with index tie-break, and consistent hashing walks a ring
of virtual nodes placed with the fixed 64-bit hash from the event core.

Instances that recently failed a call are held in a suspect set and
skipped while healthier candidates exist; registry eviction clears them
out for good a couple of heartbeats later.
"""

from __future__ import annotations

import enum
from bisect import bisect_left, insort
from dataclasses import dataclass, field

from tripsim._backend import hash64
from tripsim.services import ServiceInstance


class UnknownRequestClass(Exception):
    pass


class NoCandidates(Exception):
    pass


class RemoveAbsentNode(Exception):
    pass


@dataclass(frozen=True)
class RouteEntry:
    """Request class -> gateway entry endpoint, plus shedding eligibility."""

    cls: str
    entry_endpoint: str  # "ApiGateway.<cls>"
    critical: bool = False


class RouteTable:
    def __init__(self, entries: dict[str, RouteEntry]):
        self._entries = dict(entries)

    def route(self, cls: str) -> RouteEntry:
        entry = self._entries.get(cls)
        if entry is None:
            raise UnknownRequestClass(cls)
        return entry

    def classes(self) -> list[str]:
        return sorted(self._entries)

    def non_critical_classes(self) -> list[str]:
        return sorted(c for c, e in self._entries.items() if not e.critical)


class LbPolicy(str, enum.Enum):
    ROUND_ROBIN = "round_robin"
    LEAST_BUSY = "least_busy"
    CONSISTENT_HASH = "consistent_hash"


class HashRing:
    """Consistent-hash ring with virtual nodes.

    Positions derive only from hash64("{node}#{vnode}"), so the ring layout
    is a pure function of membership; lookups return the first position
    clockwise from hash64(key).
    """

    def __init__(self, vnodes: int = 100):
        self.vnodes = vnodes
        self._points: list[tuple[int, str]] = []  # sorted (position, node)
        self._members: set[str] = set()

    def members(self) -> set[str]:
        return set(self._members)

    def _positions(self, node: str) -> list[int]:
        return [hash64(f"{node}#{i}".encode("utf-8")) for i in range(self.vnodes)]

    def add(self, node: str) -> None:
        if node in self._members:
            return
        self._members.add(node)
        for pos in self._positions(node):
            insort(self._points, (pos, node))

    def remove(self, node: str) -> None:
        if node not in self._members:
            raise RemoveAbsentNode(node)
        self._members.discard(node)
        self._points = [p for p in self._points if p[1] != node]

    def lookup(self, key: str, allowed: set[str] | None = None) -> str | None:
        """First node clockwise from hash(key).

        With ``allowed``, walks further clockwise past members that are not
        currently usable (unhealthy), preserving ring order.
        """
        points = self._points
        if not points:
            return None
        h = hash64(key.encode("utf-8"))
        idx = bisect_left(points, (h, ""))
        n = len(points)
        for step in range(n):
            pos, node = points[(idx + step) % n]
            if allowed is None or node in allowed:
                return node
        return None


@dataclass
class RemapSummary:
    probes: int
    moved: int

    @property
    def fraction(self) -> float:
        return self.moved / self.probes if self.probes else 0.0


def ring_update(ring: HashRing, add: tuple[str, ...] = (), remove: tuple[str, ...] = (),
                probe_keys: tuple[str, ...] = ()) -> RemapSummary:
    """Apply a membership change; report how many probe keys moved."""
    before = {k: ring.lookup(k) for k in probe_keys}
    for node in remove:
        ring.remove(node)
    for node in add:
        ring.add(node)
    moved = sum(1 for k in probe_keys if ring.lookup(k) != before[k])
    return RemapSummary(probes=len(probe_keys), moved=moved)


@dataclass
class LoadBalancer:
    """Per-service picker; holds the policy's mutable state."""

    policy: LbPolicy
    vnodes: int = 100
    rr_cursor: int = 0
    suspects: set[str] = field(default_factory=set)
    ring: HashRing | None = None

    def __post_init__(self):
        if self.policy is LbPolicy.CONSISTENT_HASH and self.ring is None:
            self.ring = HashRing(self.vnodes)

    def note_membership(self, instance_id: str, present: bool) -> None:
        if self.ring is not None:
            if present:
                self.ring.add(instance_id)
            elif instance_id in self.ring.members():
                self.ring.remove(instance_id)
        if not present:
            self.suspects.discard(instance_id)

    def note_failure(self, instance_id: str) -> None:
        self.suspects.add(instance_id)

    def note_success(self, instance_id: str) -> None:
        self.suspects.discard(instance_id)

    def pick(self, candidates: list[ServiceInstance], key: str) -> ServiceInstance:
        """Choose one instance. Candidates must be discovery-ordered (by index)."""
        if not candidates:
            raise NoCandidates()
        usable = [c for c in candidates if c.id not in self.suspects]
        if not usable:
            usable = candidates
        if self.policy is LbPolicy.ROUND_ROBIN:
            choice = usable[self.rr_cursor % len(usable)]
            self.rr_cursor += 1
            return choice
        if self.policy is LbPolicy.LEAST_BUSY:
            return min(usable, key=lambda c: (c.load(), c.index))
        # consistent hash: ring holds every registered member; restrict to usable
        allowed = {c.id for c in usable}
        node = self.ring.lookup(key, allowed=allowed) if self.ring else None
        if node is None:
            return min(usable, key=lambda c: c.index)
        by_id = {c.id: c for c in usable}
        return by_id[node]
