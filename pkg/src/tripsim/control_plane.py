"""Service registry with heartbeat eviction, config store, autoscaler policy.

All three are passive domain objects: the runtime schedules HeartbeatTick
/ HeartbeatDeadline / ScaleEvaluate events and calls in. Discovery returns
entries in instance-index order so every consumer sees the same list.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from tripsim.engine import SimTime


class DuplicateRegistration(Exception):
    pass


class NoHealthyInstance(Exception):
    pass


class UnknownKey(Exception):
    pass


class TypeMismatch(Exception):
    pass


@dataclass
class RegistryEntry:
    instance_id: str
    kind: str
    index: int
    registered_at: SimTime
    last_heartbeat: SimTime
    healthy: bool = True
    beat_count: int = 0
    missed: int = 0


class Registry:
    """Instance directory driven purely by registrations and heartbeats.

    An instance is evicted after ``eviction_misses`` consecutive heartbeat
    deadlines pass without a beat; there is no side channel, so a crashed
    instance stays discoverable until its deadlines run out.
    """

    def __init__(self, eviction_misses: int = 2):
        self.eviction_misses = eviction_misses
        self._entries: dict[str, RegistryEntry] = {}
        self.evictions: list[tuple[SimTime, str]] = []

    def register(self, instance_id: str, kind: str, index: int, now: SimTime) -> RegistryEntry:
        existing = self._entries.get(instance_id)
        if existing is not None and existing.healthy:
            raise DuplicateRegistration(instance_id)
        entry = RegistryEntry(instance_id, kind, index, now, now)
        self._entries[instance_id] = entry
        return entry

    def deregister(self, instance_id: str) -> None:
        self._entries.pop(instance_id, None)

    def heartbeat(self, instance_id: str, now: SimTime) -> int:
        """Record a beat; returns the new beat count (for deadline chaining).

        Beats from an evicted-but-alive instance re-register it (recovery
        after a partition heals).
        """
        entry = self._entries.get(instance_id)
        if entry is None or not entry.healthy:
            raise KeyError(instance_id)
        entry.last_heartbeat = now
        entry.beat_count += 1
        entry.missed = 0
        return entry.beat_count

    def is_registered(self, instance_id: str) -> bool:
        entry = self._entries.get(instance_id)
        return entry is not None and entry.healthy

    def note_deadline(self, instance_id: str, expected_beats: int, now: SimTime) -> str:
        """Deadline check scheduled one interval after beat ``expected_beats``.

        Returns "stale" (a newer beat superseded this deadline), "wait"
        (missed but under the eviction threshold), or "evicted".
        """
        entry = self._entries.get(instance_id)
        if entry is None or not entry.healthy:
            return "stale"
        if entry.beat_count != expected_beats:
            return "stale"
        entry.missed += 1
        if entry.missed >= self.eviction_misses:
            entry.healthy = False
            self.evictions.append((now, instance_id))
            return "evicted"
        return "wait"

    def discover(self, kind: str) -> list[RegistryEntry]:
        found = sorted(
            (e for e in self._entries.values() if e.kind == kind and e.healthy),
            key=lambda e: e.index)
        if not found:
            raise NoHealthyInstance(kind)
        return found

    def healthy_count(self, kind: str) -> int:
        return sum(1 for e in self._entries.values() if e.kind == kind and e.healthy)


class ConfigStore:
    """Typed key-value store with a version counter.

    Keys are fixed by the schema (dotted names); updates apply at the next
    simulation event without restarting anything, because consumers read
    at use time.
    """

    def __init__(self, schema: dict[str, object]):
        self._values = dict(schema)
        self.version = 0

    def get(self, key: str):
        try:
            return self._values[key]
        except KeyError:
            raise UnknownKey(key) from None

    def set(self, key: str, value) -> int:
        if key not in self._values:
            raise UnknownKey(key)
        current = self._values[key]
        if current is not None and value is not None:
            ok = isinstance(value, type(current))
            # bool is an int subclass; keep the two distinct
            if isinstance(current, bool) != isinstance(value, bool):
                ok = False
            if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
                ok = True
            if not ok:
                raise TypeMismatch(f"{key}: expected {type(current).__name__}, "
                                   f"got {type(value).__name__}")
        self._values[key] = value
        self.version += 1
        return self.version

    def keys(self) -> list[str]:
        return sorted(self._values)


@dataclass(frozen=True)
class AutoscalePolicy:
    high_watermark: float  # percent
    low_watermark: float
    window_us: SimTime
    cooldown_us: SimTime
    min_instances: int
    max_instances: int
    startup_delay_us: SimTime

    def __post_init__(self):
        assert self.low_watermark < self.high_watermark
        assert self.min_instances <= self.max_instances


@dataclass
class ScaleDecision:
    action: str  # "out" | "in" | "hold"
    count: int = 0


def evaluate_scaling(policy: AutoscalePolicy, mean_util_pct: float,
                     current: int, last_action_at: SimTime | None,
                     now: SimTime) -> ScaleDecision:
    """Threshold policy with dead band, cooldown, and [min, max] clamping.

    ``current`` counts instances that are up, starting, or draining-out,
    so repeated evaluations during startup do not over-provision.
    """
    if last_action_at is not None and now - last_action_at < policy.cooldown_us:
        return ScaleDecision("hold")
    if mean_util_pct > policy.high_watermark and current < policy.max_instances:
        return ScaleDecision("out", 1)
    if mean_util_pct < policy.low_watermark and current > policy.min_instances:
        return ScaleDecision("in", 1)
    return ScaleDecision("hold")
