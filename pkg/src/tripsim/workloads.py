"""Workload generators: closed-loop users, open-loop arrivals, spikes,
and fixed-period status updates.

Closed-loop users assign request classes by largest-remainder quota by
default (the realized mix is exact and seed-independent), issue a request,
wait for its response, think, and repeat. Start times stagger across one
think period so a cold start does not slam the gateway in one event.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import floor

from tripsim.engine import SimTime, WorkloadTick


@dataclass(frozen=True)
class ClosedLoop:
    users: int
    think_us: SimTime
    mix: dict[str, float]
    per_user_classes: bool = True


@dataclass(frozen=True)
class OpenLoop:
    rate_per_s: float
    mix: dict[str, float]
    interarrival: str = "exponential"  # or "deterministic"


@dataclass(frozen=True)
class Spike:
    base_rate_per_s: float
    multiplier: float
    start_us: SimTime
    duration_us: SimTime
    mix: dict[str, float]
    interarrival: str = "exponential"


@dataclass(frozen=True)
class PeriodicUpdate:
    sources: int
    period_us: SimTime
    cls: str


WorkloadSpec = ClosedLoop | OpenLoop | Spike | PeriodicUpdate


def quota_assignment(mix: dict[str, float], n: int) -> list[str]:
    """Largest-remainder split of ``n`` slots over class weights."""
    names = sorted(mix)
    exact = {c: mix[c] * n for c in names}
    counts = {c: floor(exact[c]) for c in names}
    shortfall = n - sum(counts.values())
    by_remainder = sorted(names, key=lambda c: (-(exact[c] - counts[c]), c))
    for c in by_remainder[:shortfall]:
        counts[c] += 1
    out: list[str] = []
    for c in names:
        out.extend([c] * counts[c])
    return out


class ClosedLoopGenerator:
    """Fixed population; each user waits for the response, thinks, repeats."""

    def __init__(self, spec: ClosedLoop, sim):
        self.spec = spec
        self.sim = sim
        self._classes = quota_assignment(spec.mix, spec.users) \
            if spec.per_user_classes else None
        self._stream = sim.engine.stream("workload.classes")
        self.outstanding = 0
        self.max_outstanding = 0

    def start(self) -> None:
        stagger = self.spec.think_us // max(1, self.spec.users)
        for i in range(self.spec.users):
            self.sim.engine.schedule_at(i * stagger, WorkloadTick(self, token=i))

    def _class_for(self, user: int) -> str:
        if self._classes is not None:
            return self._classes[user]
        return self.sim.pick_class(self.spec.mix, self._stream)

    def on_tick(self, token: int) -> None:
        if self.sim.engine.now >= self.sim.duration_us:
            return
        self.outstanding += 1
        if self.outstanding > self.max_outstanding:
            self.max_outstanding = self.outstanding
        self.sim.start_request(self._class_for(token), f"user-{token}",
                               done_cb=lambda _outcome, tok=token: self._on_done(tok))

    def _on_done(self, token: int) -> None:
        self.outstanding -= 1
        self.sim.engine.schedule_in(self.spec.think_us, WorkloadTick(self, token=token))


class OpenLoopGenerator:
    """Poisson (or evenly spaced) arrivals at a possibly spiking rate."""

    def __init__(self, spec: OpenLoop | Spike, sim):
        self.spec = spec
        self.sim = sim
        self._arrivals = sim.engine.stream("workload.arrivals")
        self._classes = sim.engine.stream("workload.classes")
        self._counter = 0

    def start(self) -> None:
        if self._current_rate(0) > 0 or isinstance(self.spec, Spike):
            self._schedule_next()

    def _current_rate(self, now: SimTime) -> float:
        if isinstance(self.spec, Spike):
            base = self.spec.base_rate_per_s
            if self.spec.start_us <= now < self.spec.start_us + self.spec.duration_us:
                return base * self.spec.multiplier
            return base
        return self.spec.rate_per_s

    def _schedule_next(self) -> None:
        now = self.sim.engine.now
        rate = self._current_rate(now)
        if rate <= 0:
            return
        mean_us = int(round(1_000_000.0 / rate))
        if self.spec.interarrival == "deterministic":
            gap = mean_us
        else:
            gap = self._arrivals._core.exponential_us(mean_us)
        self.sim.engine.schedule_in(max(1, gap), WorkloadTick(self, token=0))

    def on_tick(self, token: int) -> None:
        now = self.sim.engine.now
        if now >= self.sim.duration_us:
            return
        self._counter += 1
        cls = self.sim.pick_class(self.spec.mix, self._classes)
        self.sim.start_request(cls, f"req-{self._counter}", done_cb=None)
        self._schedule_next()


class PeriodicGenerator:
    """S sources, each firing exactly every period; timestamps carry no
    randomness at all."""

    def __init__(self, spec: PeriodicUpdate, sim):
        self.spec = spec
        self.sim = sim
        self.arrivals = 0

    def start(self) -> None:
        self.sim.engine.schedule_at(0, WorkloadTick(self, token=0))

    def on_tick(self, token: int) -> None:
        now = self.sim.engine.now
        if now >= self.sim.duration_us:
            return
        for j in range(self.spec.sources):
            self.arrivals += 1
            self.sim.start_request(self.spec.cls, f"vehicle-{j}", done_cb=None)
        self.sim.engine.schedule_in(self.spec.period_us, WorkloadTick(self, token=0))


def build_generator(spec: WorkloadSpec, sim):
    if isinstance(spec, ClosedLoop):
        return ClosedLoopGenerator(spec, sim)
    if isinstance(spec, (OpenLoop, Spike)):
        return OpenLoopGenerator(spec, sim)
    if isinstance(spec, PeriodicUpdate):
        return PeriodicGenerator(spec, sim)
    raise TypeError(f"unknown workload spec {spec!r}")
