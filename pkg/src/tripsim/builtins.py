"""Built-in scenario bundles: the user sweep, the paired microservices-vs-
monolith comparison suite, the steady telemetry workload, the saga
consistency sweep, and paired breaker/autoscaler demonstrations.

All bundles are self-contained Scenario objects; the CLI resolves a
builtin name to an ordered list of runs (plus any post-processing such as
the comparison file or the chaos summary).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from tripsim import catalog as cat
from tripsim.faults import KillInstances, PartitionService, SagaStepFault
from tripsim.scenario import Scenario
from tripsim.workloads import ClosedLoop, OpenLoop, PeriodicUpdate, Spike

SECOND_MS = 1000


def _scenario(sid: str, **kwargs) -> Scenario:
    return Scenario(id=sid, **kwargs)


def telemetry_steady(seed: int = 42) -> list[Scenario]:
    """Ten periodic sources posting a status update every five seconds."""
    return [_scenario(
        "telemetry_steady", seed=seed,
        duration_us=60_000_000, warmup_us=6_000_000,
        workload=PeriodicUpdate(sources=10, period_us=5_000_000, cls="status_update"),
    )]


# Fixed large deployment for the concurrency sweep: the gateway is the
# designed bottleneck (~5000 requests/s) so throughput plateaus there while
# every other pool keeps >=15% headroom at saturation.
SWEEP_INSTANCES = {
    cat.GATEWAY: 44, cat.SEARCH: 28, cat.FLIGHT: 22, cat.HOTEL: 22,
    cat.PAYMENT: 8, cat.USER: 4, cat.NOTIFY: 2,
}
SWEEP_DB_CAPACITY = {cat.FLIGHT: 32, cat.HOTEL: 32, cat.PAYMENT: 12, cat.USER: 12}
SWEEP_USERS = [100, 500, 1000, 5000, 10000]


def table3_sweep(seed: int = 42) -> list[Scenario]:
    """Closed-loop user sweep over a fixed deployment, autoscaler off."""
    runs = []
    for users in SWEEP_USERS:
        runs.append(_scenario(
            f"table3_users_{users}", family="table3_sweep",
            seed=seed + SWEEP_USERS.index(users),
            duration_us=20_000_000, warmup_us=2_000_000,
            instances=dict(SWEEP_INSTANCES),
            db_capacity=dict(SWEEP_DB_CAPACITY),
            workload=ClosedLoop(users=users, think_us=1_000_000,
                                mix=dict(cat.DEFAULT_MIX)),
        ))
    return runs


def _paired(family: str, seed: int, duration_ms: int, warmup_ms: int,
            workload, mcf_extra: dict | None = None,
            mono_extra: dict | None = None,
            mcf_faults: list | None = None,
            mono_faults: list | None = None) -> list[Scenario]:
    base = dict(duration_us=duration_ms * 1000, warmup_us=warmup_ms * 1000,
                family=family, workload=workload)
    mcf = _scenario(f"{family}_mcf", mode="microservices", seed=seed,
                    patterns=dict(mcf_extra or {}), faults=list(mcf_faults or []),
                    **base)
    mono = _scenario(f"{family}_mono", mode="monolith", seed=seed,
                     patterns=dict(mono_extra or {}), faults=list(mono_faults or []),
                     **base)
    return [mcf, mono]


FAST_AUTOSCALE = {
    "autoscale.enabled": True,
    "autoscale.window_ms": 1000,
    "autoscale.cooldown_ms": 1500,
    "autoscale.startup_delay_ms": 1000,
    "autoscale.min_instances": 2,
}


def table4_suite(seed: int = 42) -> list[Scenario]:
    """Five paired scenarios, each run under both deployment modes."""
    runs: list[Scenario] = []
    runs += _paired("table4_normal", seed, 60_000, 6_000,
                    ClosedLoop(60, 1_000_000, dict(cat.DEFAULT_MIX)))
    runs += _paired("table4_peak", seed, 60_000, 6_000,
                    ClosedLoop(1500, 1_000_000, dict(cat.DEFAULT_MIX)),
                    mcf_extra=FAST_AUTOSCALE)
    runs += _paired("table4_heavy_db", seed, 60_000, 6_000,
                    ClosedLoop(60, 1_000_000, dict(cat.DEFAULT_MIX)),
                    mcf_extra={"db.query_time_multiplier": 5.0},
                    mono_extra={"db.query_time_multiplier": 5.0})
    runs += _paired("table4_net_latency", seed, 60_000, 6_000,
                    ClosedLoop(60, 1_000_000, dict(cat.DEFAULT_MIX)))
    # 200 users give ~5ms arrival gaps, so the measured monolith recovery
    # sits within one gap of the 500ms restart.
    runs += _paired("table4_failover", seed, 90_000, 9_000,
                    ClosedLoop(200, 1_000_000, dict(cat.DEFAULT_MIX)),
                    mcf_faults=[KillInstances(cat.FLIGHT, 1, 30_000_000)],
                    mono_faults=[KillInstances("Monolith", 1, 30_000_000)])
    return runs


def breaker_demo(seed: int = 42) -> list[Scenario]:
    """Partition the search service; pair a breaker-on and breaker-off run.

    The client deadline is pushed out so the breaker-off run shows the
    full per-call timeout cost instead of clients abandoning queues.
    """
    runs = []
    for variant, enabled in (("on", True), ("off", False)):
        runs.append(_scenario(
            f"breaker_{variant}", family="breaker_demo", seed=seed,
            duration_us=50_000_000, warmup_us=5_000_000,
            patterns={"breaker.enabled": enabled, "client.timeout_ms": 60_000},
            workload=OpenLoop(rate_per_s=50.0, mix={"search_trip": 1.0},
                              interarrival="deterministic"),
            faults=[PartitionService(cat.SEARCH, 10_000_000, 40_000_000)],
            meta={"steady_window_ms": [15_000, 35_000]},
        ))
    return runs


def autoscale_spike(seed: int = 42) -> list[Scenario]:
    """5x arrival-rate spike for 30s; autoscaled versus fixed capacity.

    At 5x50/s the gateway runs at ~110% of its fixed capacity, so the
    fixed run saturates for the whole spike while one scale-out absorbs it.
    """
    workload = Spike(base_rate_per_s=50.0, multiplier=5.0,
                     start_us=20_000_000, duration_us=30_000_000,
                     mix=dict(cat.DEFAULT_MIX))
    meta = {"p95_ceiling_ms": 250, "spike_end_ms": 50_000}
    on = _scenario("autoscale_on", family="autoscale_spike", seed=seed,
                   duration_us=90_000_000, warmup_us=9_000_000,
                   patterns=dict(FAST_AUTOSCALE), workload=workload, meta=dict(meta))
    fixed = _scenario("autoscale_fixed", family="autoscale_spike", seed=seed,
                      duration_us=90_000_000, warmup_us=9_000_000,
                      workload=workload, meta=dict(meta))
    return [on, fixed]


CHAOS_MODES = ["Timeout", "InstanceCrashed", "Rejected", "PaymentDeclined"]
CHAOS_STEPS = ["flight", "hotel", "payment"]


def chaos_saga(seed: int = 42) -> list[Scenario]:
    """Saga consistency battery: 12 exhaustive single-fault cases (every
    failure mode at every compensable step) plus one seeded run of 1000+
    sagas under random multi-fault plans.

    The random battery turns the circuit breaker off and spaces bookings
    out so each saga's injected faults play through their own retry and
    compensation paths instead of collapsing into breaker fast-fails for
    every saga behind the first few.
    """
    runs: list[Scenario] = []
    for step in CHAOS_STEPS:
        for mode in CHAOS_MODES:
            runs.append(_scenario(
                f"chaos_{step}_{mode.lower()}", family="chaos_saga", seed=seed,
                duration_us=20_000_000, warmup_us=1_000,
                workload=PeriodicUpdate(sources=1, period_us=10_000_000,
                                        cls="book_trip"),
                saga_faults=[SagaStepFault(step, "forward", mode, None)],
                meta={"chaos_case": f"{step}/{mode}", "expect": "compensated"},
            ))
    instances = dict(cat.DEFAULT_INSTANCES)
    instances[cat.GATEWAY] = 8  # worst-case saga takes ~9s; keep slots free
    runs.append(_scenario(
        "chaos_random_1000", family="chaos_saga", seed=seed,
        duration_us=405_000_000, warmup_us=1_000,
        instances=instances,
        patterns={"breaker.enabled": False},
        workload=PeriodicUpdate(sources=1, period_us=400_000, cls="book_trip"),
        meta={"saga_chaos": True, "expect": "mixed"},
    ))
    return runs


@dataclass(frozen=True)
class Builtin:
    name: str
    kind: str  # "single" | "suite" | "sweep" | "chaos"
    description: str
    build: Callable[[int], list[Scenario]]


BUILTINS: dict[str, Builtin] = {
    "telemetry_steady": Builtin(
        "telemetry_steady", "single",
        "10 periodic sources, one status update each every 5s, 60s run",
        telemetry_steady),
    "table3_sweep": Builtin(
        "table3_sweep", "sweep",
        "closed-loop user sweep (100..10000 users) on a fixed deployment",
        table3_sweep),
    "table4_suite": Builtin(
        "table4_suite", "suite",
        "five paired scenarios (normal/peak/heavy-db/net-latency/failover), "
        "microservices vs monolith",
        table4_suite),
    "chaos_saga": Builtin(
        "chaos_saga", "chaos",
        "saga consistency: 12 exhaustive single-fault cases + 1000 random runs",
        chaos_saga),
    "breaker_demo": Builtin(
        "breaker_demo", "suite",
        "search service partition with circuit breaker on vs off",
        breaker_demo),
    "autoscale_spike": Builtin(
        "autoscale_spike", "suite",
        "5x traffic spike for 30s, threshold autoscaler vs fixed capacity",
        autoscale_spike),
}
