"""Fault injection: instance kills, slowdowns, network delay, database
overload, service partitions, timed config updates, and targeted saga
step failures for the consistency sweep.

Faults are scheduled as FaultInject / FaultClear events; the FaultState
object holds what is currently active and is consulted by the runtime on
the affected paths. No fault effect exists outside its window.
"""

from __future__ import annotations

from dataclasses import dataclass

from tripsim.engine import SimTime


class TargetMissing(Exception):
    pass


@dataclass(frozen=True)
class KillInstances:
    kind: str
    count: int
    at_us: SimTime


@dataclass(frozen=True)
class SlowInstances:
    kind: str
    delay_us: SimTime
    start_us: SimTime
    end_us: SimTime


@dataclass(frozen=True)
class NetworkDelay:
    link: str  # "entry", "all", or "Caller->Callee"
    delay_us: SimTime
    start_us: SimTime
    end_us: SimTime


@dataclass(frozen=True)
class DbOverload:
    owner: str
    capacity_to: int
    start_us: SimTime
    end_us: SimTime


@dataclass(frozen=True)
class PartitionService:
    kind: str
    start_us: SimTime
    end_us: SimTime


@dataclass(frozen=True)
class TimedConfigUpdate:
    key: str
    value: object
    at_us: SimTime


@dataclass(frozen=True)
class SagaStepFault:
    """Force an outcome on attempts of one saga step.

    ``attempts`` caps how many attempts fail (None = all of them, which
    makes the step failure terminal). Timeout injections model a request
    lost in transit: the callee never sees it, so no side effect lands.
    """

    step: str
    stage: str  # "forward" | "compensation"
    mode: str   # "Timeout" | "InstanceCrashed" | "Rejected" | "PaymentDeclined"
    attempts: int | None = None


FaultSpec = (KillInstances | SlowInstances | NetworkDelay | DbOverload
             | PartitionService | TimedConfigUpdate)


class FaultState:
    """Currently active fault effects, keyed for O(1) hot-path checks."""

    def __init__(self):
        self.slow_by_kind: dict[str, SimTime] = {}
        self.partitioned: set[str] = set()
        self.entry_delay_extra: SimTime = 0
        self.link_delay: dict[tuple[str, str], SimTime] = {}
        self.all_links_delay: SimTime = 0

    def service_extra_us(self, kind: str) -> SimTime:
        return self.slow_by_kind.get(kind, 0)

    def hop_extra_us(self, caller: str, callee: str) -> SimTime:
        return self.all_links_delay + self.link_delay.get((caller, callee), 0)

    def is_partitioned(self, kind: str) -> bool:
        return kind in self.partitioned

    # -- inject/clear transitions (runtime event handlers call these)

    def apply(self, fault) -> None:
        if isinstance(fault, SlowInstances):
            self.slow_by_kind[fault.kind] = self.slow_by_kind.get(fault.kind, 0) + fault.delay_us
        elif isinstance(fault, PartitionService):
            self.partitioned.add(fault.kind)
        elif isinstance(fault, NetworkDelay):
            if fault.link == "entry":
                self.entry_delay_extra += fault.delay_us
            elif fault.link == "all":
                self.all_links_delay += fault.delay_us
            else:
                caller, callee = fault.link.split("->", 1)
                key = (caller.strip(), callee.strip())
                self.link_delay[key] = self.link_delay.get(key, 0) + fault.delay_us

    def clear(self, fault) -> None:
        if isinstance(fault, SlowInstances):
            remaining = self.slow_by_kind.get(fault.kind, 0) - fault.delay_us
            if remaining <= 0:
                self.slow_by_kind.pop(fault.kind, None)
            else:
                self.slow_by_kind[fault.kind] = remaining
        elif isinstance(fault, PartitionService):
            self.partitioned.discard(fault.kind)
        elif isinstance(fault, NetworkDelay):
            if fault.link == "entry":
                self.entry_delay_extra -= fault.delay_us
            elif fault.link == "all":
                self.all_links_delay -= fault.delay_us
            else:
                caller, callee = fault.link.split("->", 1)
                key = (caller.strip(), callee.strip())
                remaining = self.link_delay.get(key, 0) - fault.delay_us
                if remaining <= 0:
                    self.link_delay.pop(key, None)
                else:
                    self.link_delay[key] = remaining


def validate_faults(faults: list, known_kinds: set[str]) -> None:
    """Referential checks: every fault target must exist in the deployment."""
    for f in faults:
        if isinstance(f, (KillInstances, SlowInstances, PartitionService)):
            if f.kind not in known_kinds:
                raise TargetMissing(f.kind)
        elif isinstance(f, DbOverload):
            if f.owner not in known_kinds and f.owner != "Monolith":
                raise TargetMissing(f.owner)
        if isinstance(f, (SlowInstances, NetworkDelay, DbOverload, PartitionService)):
            if f.end_us <= f.start_us:
                raise ValueError(f"fault window empty: {f}")
