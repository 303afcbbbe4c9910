"""Scenario files: schema, validation, defaults, and the resolved model.

A scenario is a YAML document with sections ``deployment``, ``catalog``,
``patterns``, ``workload``, ``faults``, ``saga_faults``, and ``run``.
Unknown keys anywhere are rejected; every omitted knob falls back to the
documented defaults below. Validation reports diagnostics as
"section.path: problem" lines and never partially loads a bad file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import yaml

from tripsim import catalog as cat
from tripsim.engine import ms
from tripsim.faults import (DbOverload, KillInstances, NetworkDelay,
                            PartitionService, SagaStepFault, SlowInstances,
                            TimedConfigUpdate)
from tripsim.services import MONOLITH, ServiceKind
from tripsim.workloads import (ClosedLoop, OpenLoop, PeriodicUpdate, Spike,
                               WorkloadSpec)

# Every config-store key with its default. Values are plain ints/floats/
# bools/strings; *_ms keys are milliseconds converted at use time.
CONFIG_DEFAULTS: dict[str, Any] = {
    "breaker.enabled": True,
    "breaker.window": 20,
    "breaker.min_calls": 10,
    "breaker.failure_ratio": 0.5,
    "breaker.open_duration_ms": 5000,
    "breaker.half_open_probes": 3,
    "breaker.fast_fail_overhead_ms": 1,
    "retry.max_attempts": 3,
    "retry.backoff_base_ms": 10,
    "retry.backoff_multiplier": 2.0,
    "bulkhead.limit": 0,  # 0 disables the bulkhead
    "timeout.call_ms": 1000,
    "client.timeout_ms": 5000,
    "degrade.enabled": False,
    "degrade.latency_ceiling_ms": 500,
    "degrade.shed_watermark_pct": 90.0,
    "degrade.window_ms": 5000,
    "autoscale.enabled": False,
    "autoscale.high_watermark_pct": 70.0,
    "autoscale.low_watermark_pct": 30.0,
    "autoscale.window_ms": 5000,
    "autoscale.cooldown_ms": 10000,
    "autoscale.startup_delay_ms": 2000,
    "autoscale.min_instances": 1,
    "autoscale.max_instances": 20,
    "registry.heartbeat_interval_ms": 1000,
    "registry.eviction_misses": 2,
    "lb.policy": "least_busy",
    "lb.vnodes": 100,
    "network.entry_delay_ms": 30,  # monolith scenarios default to 40
    "network.interservice_delay_ms": 1,
    "db.query_time_multiplier": 1.0,
    "saga.compensation_retries": 5,
    "saga.compensation_backoff_ms": 50,
    "report.tick_ms": 1000,
    "memory.footprint_units": 64,
    "memory.per_inflight_units": 1,
    "memory.node_units": 1024,
}
# Per-kind load-balancer overrides; empty string inherits lb.policy.
for _kind in cat.SERVING_KINDS:
    CONFIG_DEFAULTS[f"lb.policy.{_kind}"] = ""

MONOLITH_ENTRY_DELAY_MS = 40

_FAULT_KINDS = {"kill_instances", "slow_instances", "network_delay",
                "db_overload", "partition_service", "config_update"}
_SAGA_STEPS = {"flight", "hotel", "payment"}
_SAGA_MODES = {"Timeout", "InstanceCrashed", "Rejected", "PaymentDeclined"}


class ScenarioError(Exception):
    """Validation failure; ``diagnostics`` lists every problem found."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass
class Scenario:
    """Fully resolved experiment description (what Simulation consumes)."""

    id: str
    mode: str = "microservices"
    family: str = ""
    seed: int = 0
    duration_us: int = 60_000_000
    warmup_us: int = 6_000_000
    instances: dict[str, int] = field(default_factory=lambda: dict(cat.DEFAULT_INSTANCES))
    capacity: dict[str, int] = field(default_factory=dict)
    queue_bound: int = 64
    db_capacity: dict[str, int] = field(default_factory=dict)
    monolith_db_capacity: int = 8
    monolith_restart_us: int = 500_000
    patterns: dict[str, Any] = field(default_factory=dict)
    endpoint_overrides: dict[str, dict] | None = None
    critical_overrides: dict[str, bool] | None = None
    workload: WorkloadSpec | None = None
    faults: list = field(default_factory=list)
    saga_faults: list[SagaStepFault] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.family:
            self.family = self.id

    def config_values(self) -> dict[str, Any]:
        values = dict(CONFIG_DEFAULTS)
        if self.mode == "monolith" and "network.entry_delay_ms" not in self.patterns:
            values["network.entry_delay_ms"] = MONOLITH_ENTRY_DELAY_MS
        values.update(self.patterns)
        return values

    def with_overrides(self, seed: int | None = None, duration_us: int | None = None,
                       warmup_us: int | None = None) -> "Scenario":
        out = Scenario(**{**self.__dict__})
        if seed is not None:
            out.seed = seed
        if duration_us is not None:
            out.duration_us = duration_us
        if warmup_us is not None:
            out.warmup_us = warmup_us
        return out


# --------------------------------------------------------------------------
# Parsing and validation


class _Check:
    def __init__(self):
        self.errors: list[str] = []

    def fail(self, path: str, message: str) -> None:
        self.errors.append(f"{path}: {message}")

    def expect_keys(self, path: str, node: dict, allowed: set[str],
                    required: set[str] = frozenset()) -> bool:
        ok = True
        for key in node:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else key, "unknown key")
                ok = False
        for key in required:
            if key not in node:
                self.fail(f"{path}.{key}" if path else key, "required key missing")
                ok = False
        return ok

    def number(self, path: str, value, minimum=None) -> float | None:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            self.fail(path, f"expected a number, got {type(value).__name__}")
            return None
        if minimum is not None and value < minimum:
            self.fail(path, f"must be >= {minimum}, got {value}")
            return None
        return value

    def integer(self, path: str, value, minimum=None) -> int | None:
        if not isinstance(value, int) or isinstance(value, bool):
            self.fail(path, f"expected an integer, got {type(value).__name__}")
            return None
        if minimum is not None and value < minimum:
            self.fail(path, f"must be >= {minimum}, got {value}")
            return None
        return value


def _known_kinds() -> set[str]:
    return {k.value for k in ServiceKind}


def _parse_workload(node: dict, chk: _Check, classes: set[str]) -> WorkloadSpec | None:
    if not isinstance(node, dict):
        chk.fail("workload", "expected a mapping")
        return None
    kind = node.get("kind")
    if kind not in {"closed_loop", "open_loop", "spike", "periodic"}:
        chk.fail("workload.kind", f"unknown workload kind {kind!r}")
        return None

    def mix_of(allowed_default) -> dict[str, float]:
        mix = node.get("mix", allowed_default)
        if not isinstance(mix, dict) or not mix:
            chk.fail("workload.mix", "expected a non-empty mapping")
            return allowed_default
        total = 0.0
        for cls, w in mix.items():
            if cls not in classes:
                chk.fail(f"workload.mix.{cls}", "class has no route")
            value = chk.number(f"workload.mix.{cls}", w, minimum=0)
            total += value or 0.0
        if abs(total - 1.0) > 1e-6:
            chk.fail("workload.mix", f"weights sum to {total:g}, expected 1.0")
        return mix

    if kind == "closed_loop":
        chk.expect_keys("workload", node,
                        {"kind", "users", "think_time_ms", "mix", "per_user_classes"},
                        {"users"})
        users = chk.integer("workload.users", node.get("users", 0), minimum=1)
        think = chk.number("workload.think_time_ms", node.get("think_time_ms", 1000),
                           minimum=0)
        mix = mix_of(dict(cat.DEFAULT_MIX))
        if chk.errors:
            return None
        return ClosedLoop(users, ms(think), mix,
                          per_user_classes=bool(node.get("per_user_classes", True)))
    if kind == "open_loop":
        chk.expect_keys("workload", node, {"kind", "rate_per_s", "mix", "interarrival"},
                        {"rate_per_s"})
        rate = chk.number("workload.rate_per_s", node.get("rate_per_s"), minimum=0)
        inter = node.get("interarrival", "exponential")
        if inter not in ("exponential", "deterministic"):
            chk.fail("workload.interarrival", f"unknown mode {inter!r}")
        mix = mix_of(dict(cat.DEFAULT_MIX))
        if chk.errors:
            return None
        return OpenLoop(rate, mix, interarrival=inter)
    if kind == "spike":
        chk.expect_keys("workload", node,
                        {"kind", "base_rate_per_s", "multiplier", "spike_start_ms",
                         "spike_duration_ms", "mix", "interarrival"},
                        {"base_rate_per_s", "multiplier", "spike_start_ms",
                         "spike_duration_ms"})
        base = chk.number("workload.base_rate_per_s", node.get("base_rate_per_s"),
                          minimum=0.001)
        mult = chk.number("workload.multiplier", node.get("multiplier"), minimum=0)
        start = chk.number("workload.spike_start_ms", node.get("spike_start_ms"),
                           minimum=0)
        dur = chk.number("workload.spike_duration_ms", node.get("spike_duration_ms"),
                         minimum=0)
        inter = node.get("interarrival", "exponential")
        if inter not in ("exponential", "deterministic"):
            chk.fail("workload.interarrival", f"unknown mode {inter!r}")
        mix = mix_of(dict(cat.DEFAULT_MIX))
        if chk.errors:
            return None
        return Spike(base, mult, ms(start), ms(dur), mix, interarrival=inter)
    chk.expect_keys("workload", node, {"kind", "sources", "period_ms", "cls"},
                    {"sources", "period_ms", "cls"})
    sources = chk.integer("workload.sources", node.get("sources"), minimum=1)
    period = chk.number("workload.period_ms", node.get("period_ms"), minimum=1)
    cls = node.get("cls")
    if cls not in classes:
        chk.fail("workload.cls", f"class {cls!r} has no route")
    if chk.errors:
        return None
    return PeriodicUpdate(sources, ms(period), cls)


def _parse_faults(nodes: list, chk: _Check, kinds_in_deploy: set[str],
                  mode: str) -> list:
    out: list = []
    if not isinstance(nodes, list):
        chk.fail("faults", "expected a list")
        return out
    targets = set(kinds_in_deploy)
    if mode == "monolith":
        targets.add(MONOLITH)
    for i, node in enumerate(nodes):
        path = f"faults[{i}]"
        if not isinstance(node, dict):
            chk.fail(path, "expected a mapping")
            continue
        fkind = node.get("kind")
        if fkind not in _FAULT_KINDS:
            chk.fail(f"{path}.kind", f"unknown fault kind {fkind!r}")
            continue

        def target_ok(value) -> bool:
            if value not in targets:
                chk.fail(f"{path}.target",
                         f"target {value!r} not in this deployment")
                return False
            return True

        if fkind == "kill_instances":
            chk.expect_keys(path, node, {"kind", "target", "count", "at_ms"},
                            {"target", "at_ms"})
            count = chk.integer(f"{path}.count", node.get("count", 1), minimum=1)
            at = chk.number(f"{path}.at_ms", node.get("at_ms"), minimum=0)
            if target_ok(node.get("target")) and not chk.errors:
                out.append(KillInstances(node["target"], count, ms(at)))
        elif fkind == "config_update":
            chk.expect_keys(path, node, {"kind", "key", "value", "at_ms"},
                            {"key", "value", "at_ms"})
            key = node.get("key")
            if key not in CONFIG_DEFAULTS:
                chk.fail(f"{path}.key", f"unknown config key {key!r}")
            at = chk.number(f"{path}.at_ms", node.get("at_ms"), minimum=0)
            if not chk.errors:
                out.append(TimedConfigUpdate(key, node.get("value"), ms(at)))
        else:
            window_keys = {"kind", "target", "start_ms", "end_ms"}
            extra = {"slow_instances": {"delay_ms"}, "network_delay": {"delay_ms", "link"},
                     "db_overload": {"capacity_to"},
                     "partition_service": set()}[fkind]
            required = {"start_ms", "end_ms"} | ({"target"} if fkind != "network_delay" else set())
            chk.expect_keys(path, node, window_keys | extra, required | extra - {"link"})
            start = chk.number(f"{path}.start_ms", node.get("start_ms", 0), minimum=0)
            end = chk.number(f"{path}.end_ms", node.get("end_ms", 0), minimum=0)
            if start is not None and end is not None and end <= start:
                chk.fail(f"{path}.end_ms", "window must end after it starts")
            if fkind == "slow_instances":
                delay = chk.number(f"{path}.delay_ms", node.get("delay_ms"), minimum=0)
                if target_ok(node.get("target")) and not chk.errors:
                    out.append(SlowInstances(node["target"], ms(delay), ms(start), ms(end)))
            elif fkind == "network_delay":
                delay = chk.number(f"{path}.delay_ms", node.get("delay_ms"), minimum=0)
                link = node.get("link", "entry")
                if link not in ("entry", "all") and "->" not in str(link):
                    chk.fail(f"{path}.link", "expected entry, all, or Caller->Callee")
                if not chk.errors:
                    out.append(NetworkDelay(link, ms(delay), ms(start), ms(end)))
            elif fkind == "db_overload":
                capy = chk.integer(f"{path}.capacity_to", node.get("capacity_to"),
                                   minimum=1)
                if target_ok(node.get("target")) and not chk.errors:
                    out.append(DbOverload(node["target"], capy, ms(start), ms(end)))
            else:
                if target_ok(node.get("target")) and not chk.errors:
                    out.append(PartitionService(node["target"], ms(start), ms(end)))
    return out


def _parse_saga_faults(nodes: list, chk: _Check) -> list[SagaStepFault]:
    out: list[SagaStepFault] = []
    if not isinstance(nodes, list):
        chk.fail("saga_faults", "expected a list")
        return out
    for i, node in enumerate(nodes):
        path = f"saga_faults[{i}]"
        if not isinstance(node, dict):
            chk.fail(path, "expected a mapping")
            continue
        chk.expect_keys(path, node, {"step", "stage", "mode", "attempts"},
                        {"step", "mode"})
        step = node.get("step")
        if step not in _SAGA_STEPS:
            chk.fail(f"{path}.step", f"unknown step {step!r}")
        stage = node.get("stage", "forward")
        if stage not in ("forward", "compensation"):
            chk.fail(f"{path}.stage", f"unknown stage {stage!r}")
        mode = node.get("mode")
        if mode not in _SAGA_MODES:
            chk.fail(f"{path}.mode", f"unknown mode {mode!r}")
        attempts = node.get("attempts", "all")
        if attempts == "all":
            attempts = None
        elif not isinstance(attempts, int) or attempts < 1:
            chk.fail(f"{path}.attempts", "expected a positive integer or 'all'")
        if not chk.errors:
            out.append(SagaStepFault(step, stage, mode, attempts))
    return out


def parse_scenario(data: Any, scenario_id: str) -> Scenario:
    """Validate raw YAML data; raises ScenarioError with every diagnostic."""
    chk = _Check()
    if not isinstance(data, dict):
        raise ScenarioError(["document: expected a mapping at the top level"])
    chk.expect_keys("", data,
                    {"id", "family", "mode", "deployment", "catalog", "patterns",
                     "workload", "faults", "saga_faults", "run", "meta"},
                    {"workload", "run"})
    mode = data.get("mode", "microservices")
    if mode not in ("microservices", "monolith"):
        chk.fail("mode", f"expected microservices or monolith, got {mode!r}")

    sc = Scenario(id=data.get("id", scenario_id), mode=mode,
                  family=data.get("family", ""))

    deploy = data.get("deployment", {})
    if not isinstance(deploy, dict):
        chk.fail("deployment", "expected a mapping")
        deploy = {}
    chk.expect_keys("deployment", deploy,
                    {"instances", "capacity_per_instance", "queue_bound",
                     "db_capacity", "monolith_restart_ms", "monolith_db_capacity"})
    known = _known_kinds()
    instances = deploy.get("instances")
    if instances is not None:
        if not isinstance(instances, dict):
            chk.fail("deployment.instances", "expected a mapping")
        else:
            for kind, count in instances.items():
                if kind not in known:
                    chk.fail(f"deployment.instances.{kind}", "unknown service kind")
                chk.integer(f"deployment.instances.{kind}", count, minimum=0)
            if not chk.errors:
                sc.instances = dict(instances)
    capy = deploy.get("capacity_per_instance", cat.DEFAULT_CAPACITY)
    if isinstance(capy, dict):
        for kind, c in capy.items():
            if kind not in known:
                chk.fail(f"deployment.capacity_per_instance.{kind}", "unknown service kind")
            chk.integer(f"deployment.capacity_per_instance.{kind}", c, minimum=1)
        sc.capacity = dict(capy)
    else:
        value = chk.integer("deployment.capacity_per_instance", capy, minimum=1)
        sc.capacity = {k: (value or cat.DEFAULT_CAPACITY) for k in sc.instances}
    qb = chk.integer("deployment.queue_bound", deploy.get("queue_bound", 64), minimum=0)
    sc.queue_bound = qb if qb is not None else 64
    dbc = deploy.get("db_capacity", {})
    if not isinstance(dbc, dict):
        chk.fail("deployment.db_capacity", "expected a mapping")
    else:
        for kind, c in dbc.items():
            chk.integer(f"deployment.db_capacity.{kind}", c, minimum=1)
        sc.db_capacity = dict(dbc)
    restart = chk.number("deployment.monolith_restart_ms",
                         deploy.get("monolith_restart_ms", 500), minimum=0)
    sc.monolith_restart_us = ms(restart if restart is not None else 500)
    mdb = chk.integer("deployment.monolith_db_capacity",
                      deploy.get("monolith_db_capacity", 8), minimum=1)
    sc.monolith_db_capacity = mdb if mdb is not None else 8

    catalog_node = data.get("catalog", {})
    if not isinstance(catalog_node, dict):
        chk.fail("catalog", "expected a mapping")
        catalog_node = {}
    chk.expect_keys("catalog", catalog_node, {"endpoints", "critical"})
    endpoints = catalog_node.get("endpoints")
    if endpoints is not None:
        if not isinstance(endpoints, dict):
            chk.fail("catalog.endpoints", "expected a mapping")
        else:
            base = cat.build_endpoints()
            for ref, tweak in endpoints.items():
                if ref not in base:
                    chk.fail(f"catalog.endpoints.{ref}", "unknown endpoint")
                elif not isinstance(tweak, dict):
                    chk.fail(f"catalog.endpoints.{ref}", "expected a mapping")
            if not chk.errors:
                sc.endpoint_overrides = endpoints
    critical = catalog_node.get("critical")
    if critical is not None:
        for cls, flag in critical.items():
            if cls not in cat.REQUEST_CLASSES:
                chk.fail(f"catalog.critical.{cls}", "unknown request class")
            if not isinstance(flag, bool):
                chk.fail(f"catalog.critical.{cls}", "expected a boolean")
        if not chk.errors:
            sc.critical_overrides = critical

    patterns = data.get("patterns", {})
    if not isinstance(patterns, dict):
        chk.fail("patterns", "expected a mapping")
        patterns = {}
    for key, value in patterns.items():
        if key not in CONFIG_DEFAULTS:
            chk.fail(f"patterns.{key}", "unknown config key")
            continue
        default = CONFIG_DEFAULTS[key]
        if isinstance(default, bool) != isinstance(value, bool):
            chk.fail(f"patterns.{key}", "expected a boolean" if isinstance(default, bool)
                     else "unexpected boolean")
        elif isinstance(default, (int, float)) and not isinstance(value, (int, float)):
            chk.fail(f"patterns.{key}", f"expected a number, got {type(value).__name__}")
        elif isinstance(default, str) and not isinstance(value, str):
            chk.fail(f"patterns.{key}", f"expected a string, got {type(value).__name__}")
    sc.patterns = dict(patterns)

    run = data.get("run", {})
    if not isinstance(run, dict):
        chk.fail("run", "expected a mapping")
        run = {}
    chk.expect_keys("run", run, {"duration_ms", "warmup_ms", "seed"}, {"duration_ms"})
    duration = chk.number("run.duration_ms", run.get("duration_ms", 0), minimum=1)
    if duration is not None:
        sc.duration_us = ms(duration)
    warmup = run.get("warmup_ms")
    if warmup is None:
        sc.warmup_us = sc.duration_us // 10
    else:
        value = chk.number("run.warmup_ms", warmup, minimum=0)
        if value is not None:
            sc.warmup_us = ms(value)
            if sc.warmup_us >= sc.duration_us:
                chk.fail("run.warmup_ms", "warmup must be shorter than the run")
    seed = run.get("seed", 0)
    value = chk.integer("run.seed", seed, minimum=0)
    sc.seed = value if value is not None else 0

    classes = set(cat.REQUEST_CLASSES)
    workload = _parse_workload(data.get("workload"), chk, classes)
    sc.workload = workload

    deploy_kinds = set(sc.instances)
    sc.faults = _parse_faults(data.get("faults", []), chk, deploy_kinds, mode)
    sc.saga_faults = _parse_saga_faults(data.get("saga_faults", []), chk)

    meta = data.get("meta", {})
    if not isinstance(meta, dict):
        chk.fail("meta", "expected a mapping")
    else:
        sc.meta = dict(meta)

    if chk.errors:
        raise ScenarioError(chk.errors)
    return sc


def load_scenario(path: str) -> Scenario:
    """Load and validate a scenario file; YAML errors carry line numbers."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = yaml.safe_load(handle)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
            raise ScenarioError([f"{where}{getattr(exc, 'problem', None) or exc}"]) from exc
    stem = path.rsplit("/", 1)[-1]
    stem = stem.rsplit(".", 1)[0]
    return parse_scenario(data, stem)
