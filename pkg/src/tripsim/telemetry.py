"""Tracing, metric aggregation, recovery measurement, canonical reports.

Every call attempt opens exactly one span; the span log is the source of
truth for latency, error, and recovery metrics. Aggregation happens after
the run completes. Reports serialize canonically: fixed field order and
fixed 3-decimal formatting for every float, so two identical runs produce
byte-identical files.

Percentiles use the nearest-rank rule (no interpolation): the p-th
percentile of n sorted samples is element ceil(p/100 * n), 1-based.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any

from tripsim.engine import SimTime
from tripsim.services import ConservationCounters


class EmptyMeasurementWindow(Exception):
    pass


class NeverRecovered(Exception):
    pass


class ScenarioMismatch(Exception):
    pass


class Outcome(enum.Enum):
    SUCCESS = "Success"
    TIMEOUT = "Timeout"
    CRASHED = "InstanceCrashed"
    REJECTED = "Rejected"
    FAST_FAIL = "FastFail"
    BULKHEAD_FULL = "BulkheadFull"
    DEGRADED = "Degraded"
    BUSINESS = "BusinessFailure"
    NO_HEALTHY = "NoHealthyInstance"

    def canonical(self) -> str:
        """Report vocabulary: no-healthy-instance is a fast-fail to callers."""
        if self is Outcome.NO_HEALTHY:
            return Outcome.FAST_FAIL.value
        return self.value


RETRYABLE = frozenset({Outcome.TIMEOUT, Outcome.CRASHED, Outcome.REJECTED,
                       Outcome.NO_HEALTHY})


@dataclass(slots=True)
class Span:
    trace_id: int
    span_id: int
    parent_id: int | None
    caller: str
    callee: str
    endpoint: str
    start: SimTime
    end: SimTime | None = None
    outcome: Outcome | None = None
    attempt: int = 1
    cls: str | None = None       # request class, root spans only
    bytes_total: int = 0         # entry request+response bytes, root spans only
    detail: str | None = None    # e.g. business failure reason


class TraceLog:
    """Append-only span collection for one run."""

    def __init__(self):
        self.spans: list[Span] = []
        self._next_span_id = 1

    def open(self, trace_id: int, parent_id: int | None, caller: str, callee: str,
             endpoint: str, start: SimTime, attempt: int = 1,
             cls: str | None = None) -> Span:
        span = Span(trace_id, self._next_span_id, parent_id, caller, callee,
                    endpoint, start, attempt=attempt, cls=cls)
        self._next_span_id += 1
        self.spans.append(span)
        return span

    def close(self, span: Span, end: SimTime, outcome: Outcome,
              detail: str | None = None) -> None:
        assert span.outcome is None, "span closed twice"
        span.end = end
        span.outcome = outcome
        span.detail = detail

    def roots(self) -> list[Span]:
        return [s for s in self.spans if s.parent_id is None]

    def hops(self, caller: str, callee: str) -> list[Span]:
        return [s for s in self.spans if s.caller == caller and s.callee == callee]

    def closed_count(self) -> int:
        return sum(1 for s in self.spans if s.outcome is not None)


def nearest_rank(sorted_values: list[int], pct: float) -> int:
    """Nearest-rank percentile over pre-sorted values (non-empty)."""
    n = len(sorted_values)
    rank = math.ceil(pct / 100.0 * n)
    rank = min(max(rank, 1), n)
    return sorted_values[rank - 1]


@dataclass
class TickSample:
    """Per-kind state at the end of one metrics tick."""

    t_end_us: SimTime
    kind: str
    instances: int
    capacity: int
    busy_delta_us: int
    queue_len: int
    inflight: int


@dataclass
class RunRecord:
    """Everything the aggregator needs from one finished run."""

    scenario_id: str
    family: str
    seed: int
    mode: str
    duration_us: SimTime
    warmup_us: SimTime
    tick_us: SimTime
    spans: list[Span]
    counters: ConservationCounters
    samples: list[TickSample]
    instance_timeline: dict[str, list[tuple[SimTime, int]]]
    entry_delay_us: SimTime
    concurrent_users: int | None = None
    fault_inject_us: SimTime | None = None
    saga_stats: dict[str, int] = field(default_factory=dict)
    max_queue_by_kind: dict[str, int] = field(default_factory=dict)
    mem_footprint_units: int = 64
    mem_per_inflight_units: int = 1
    mem_node_units: int = 1024
    recovery_stabilization_us: SimTime = 1_000_000
    recovery_tolerance: float = 1.5


def _latency_stats(latencies_us: list[int]) -> dict[str, float]:
    ordered = sorted(latencies_us)
    return {
        "mean": (sum(ordered) / len(ordered)) / 1000.0,
        "p50": nearest_rank(ordered, 50) / 1000.0,
        "p95": nearest_rank(ordered, 95) / 1000.0,
        "p99": nearest_rank(ordered, 99) / 1000.0,
        "max": ordered[-1] / 1000.0,
    }


def aggregate(record: RunRecord) -> dict[str, Any]:
    """Fold one run into the canonical report structure.

    Traces starting before the warmup boundary are excluded. Raises
    EmptyMeasurementWindow when nothing completed inside the window.
    """
    w0, w1 = record.warmup_us, record.duration_us
    if w0 >= w1:
        raise EmptyMeasurementWindow("warmup consumes the whole run")
    window_s = (w1 - w0) / 1_000_000.0

    roots = [s for s in record.spans if s.parent_id is None and s.start >= w0]
    done = [s for s in roots if s.outcome is not None]
    successes = [s for s in done if s.outcome is Outcome.SUCCESS and s.end <= w1]
    if not successes:
        raise EmptyMeasurementWindow("no successful completion in measurement window")

    latencies = [s.end - s.start for s in successes]
    stats = _latency_stats(latencies)
    degraded = sum(1 for s in done if s.outcome is Outcome.DEGRADED)
    failures = sum(1 for s in done
                   if s.outcome not in (Outcome.SUCCESS, Outcome.DEGRADED))
    outcome_counts: dict[str, int] = {}
    for s in done:
        name = s.outcome.canonical()
        outcome_counts[name] = outcome_counts.get(name, 0) + 1

    bytes_total = sum(s.bytes_total for s in successes)

    # Resource metrics from tick samples fully inside the window.
    kinds = sorted({smp.kind for smp in record.samples})
    cpu_by_kind: dict[str, float] = {}
    mem_by_kind: dict[str, float] = {}
    busy_all = 0
    captime_all = 0
    mem_num_all = 0.0
    mem_den_all = 0
    for kind in kinds:
        busy = 0
        captime = 0
        mem_samples: list[float] = []
        for smp in record.samples:
            if smp.kind != kind or smp.t_end_us <= w0 or smp.t_end_us > w1:
                continue
            busy += smp.busy_delta_us
            captime += smp.capacity * record.tick_us
            if smp.instances > 0:
                mean_inflight = smp.busy_delta_us / (record.tick_us * smp.instances)
                mem_pct = 100.0 * (record.mem_footprint_units
                                   + record.mem_per_inflight_units * mean_inflight) \
                    / record.mem_node_units
                mem_samples.append(mem_pct * smp.instances)
                mem_num_all += mem_pct * smp.instances
                mem_den_all += smp.instances
        cpu_by_kind[kind] = 100.0 * busy / captime if captime else 0.0
        inst_ticks = sum(smp.instances for smp in record.samples
                         if smp.kind == kind and w0 < smp.t_end_us <= w1)
        mem_by_kind[kind] = (sum(mem_samples) / inst_ticks) if inst_ticks else 0.0
        busy_all += busy
        captime_all += captime

    timeline = {
        kind: [[t // 1000, count] for t, count in points]
        for kind, points in sorted(record.instance_timeline.items())
    }

    report: dict[str, Any] = {
        "format_version": 1,
        "scenario_id": record.scenario_id,
        "family": record.family,
        "seed": record.seed,
        "mode": record.mode,
        "duration_ms": record.duration_us / 1000.0,
        "warmup_ms": record.warmup_us / 1000.0,
        "concurrent_users": record.concurrent_users,
        "requests": {
            "issued": record.counters.issued,
            "completed": record.counters.completed,
            "rejected": record.counters.rejected,
            "shed": record.counters.shed,
            "failed": record.counters.failed,
            "inflight_at_end": record.counters.inflight_at_end,
        },
        "latency_ms": stats,
        "throughput_tps": len(successes) / window_s,
        "error_rate": failures / len(done) if done else 0.0,
        "degraded_rate": degraded / len(done) if done else 0.0,
        "outcomes": dict(sorted(outcome_counts.items())),
        "cpu_percent": {
            "aggregate": 100.0 * busy_all / captime_all if captime_all else 0.0,
            "per_service": cpu_by_kind,
        },
        "memory_percent": {
            "aggregate": mem_num_all / mem_den_all if mem_den_all else 0.0,
            "per_service": mem_by_kind,
        },
        "network_kbps": (bytes_total / 1024.0) / window_s,
        "network_entry_delay_ms": record.entry_delay_us / 1000.0,
        "instance_timeline": timeline,
        "max_queue_by_kind": dict(sorted(record.max_queue_by_kind.items())),
        "sagas": dict(sorted(record.saga_stats.items())),
        "windows": _window_series(record, roots),
    }

    if record.fault_inject_us is not None:
        try:
            rec_us = recovery_time(record.spans, record.fault_inject_us,
                                   warmup_us=w0,
                                   stabilization_us=record.recovery_stabilization_us,
                                   tolerance=record.recovery_tolerance)
            report["recovery_time_ms"] = rec_us / 1000.0
        except NeverRecovered:
            report["recovery_time_ms"] = None
    else:
        report["recovery_time_ms"] = None
    return report


def _window_series(record: RunRecord, roots: list[Span]) -> list[dict[str, Any]]:
    """Per-tick throughput/latency series over the measurement window."""
    w0, w1 = record.warmup_us, record.duration_us
    tick = record.tick_us
    buckets: dict[int, list[Span]] = {}
    for s in roots:
        if s.outcome is None or s.end is None or s.end > w1:
            continue
        buckets.setdefault(int(s.end // tick), []).append(s)
    series = []
    for b in sorted(buckets):
        t_end = (b + 1) * tick
        if t_end <= w0 or t_end > w1:
            continue
        spans = buckets[b]
        oks = [s.end - s.start for s in spans if s.outcome is Outcome.SUCCESS]
        entry = {
            "t_ms": t_end / 1000.0,
            "tps": len(oks) / (tick / 1_000_000.0),
            "mean_ms": (sum(oks) / len(oks)) / 1000.0 if oks else None,
            "p95_ms": nearest_rank(sorted(oks), 95) / 1000.0 if oks else None,
            "errors": sum(1 for s in spans
                          if s.outcome not in (Outcome.SUCCESS, Outcome.DEGRADED)),
        }
        series.append(entry)
    return series


def recovery_time(spans: list[Span], inject_us: SimTime, *, warmup_us: SimTime,
                  stabilization_us: SimTime = 1_000_000,
                  tolerance: float = 1.5,
                  baseline_p95_us: SimTime | None = None) -> SimTime:
    """Time from fault injection until sustained healthy service.

    Healthy: every trace arriving in [t, t + stabilization window] succeeds
    with latency <= healthy-baseline p95 * tolerance; the returned value is
    the earliest such t minus the injection time. The baseline p95 comes
    from traces arriving in [warmup, inject) unless supplied.
    """
    roots = [s for s in spans if s.parent_id is None and s.outcome is not None]
    if baseline_p95_us is None:
        base = sorted(s.end - s.start for s in roots
                      if warmup_us <= s.start < inject_us
                      and s.outcome is Outcome.SUCCESS)
        if not base:
            raise NeverRecovered("no healthy baseline traffic before injection")
        baseline_p95_us = nearest_rank(base, 95)
    ceiling = int(baseline_p95_us * tolerance)

    after = sorted((s for s in roots if s.start >= inject_us), key=lambda s: s.start)
    if not after:
        raise NeverRecovered("no traffic after injection")

    def bad(s: Span) -> bool:
        return s.outcome is not Outcome.SUCCESS or (s.end - s.start) > ceiling

    last_bad: SimTime | None = None
    for s in after:
        if bad(s):
            last_bad = s.start
    candidate = inject_us if last_bad is None else last_bad + 1
    window_spans = [s for s in after
                    if candidate <= s.start <= candidate + stabilization_us]
    if not window_spans:
        raise NeverRecovered("no evidence of healthy traffic after last failure")
    return candidate - inject_us


# --------------------------------------------------------------------------
# Canonical serialization


def _emit(value: Any, out: list[str]) -> None:
    if isinstance(value, dict):
        out.append("{")
        for i, (k, v) in enumerate(value.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(k)))
            out.append(":")
            _emit(v, out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, v in enumerate(value):
            if i:
                out.append(",")
            _emit(v, out)
        out.append("]")
    elif isinstance(value, bool):
        out.append("true" if value else "false")
    elif isinstance(value, float):
        out.append(format(value, ".3f"))
    elif isinstance(value, int):
        out.append(str(value))
    elif value is None:
        out.append("null")
    else:
        out.append(json.dumps(str(value)))


def canonical_bytes(report: dict[str, Any]) -> bytes:
    """Serialize a report deterministically: insertion-ordered keys,
    3-decimal floats, no whitespace variance, trailing newline."""
    out: list[str] = []
    _emit(report, out)
    out.append("\n")
    return "".join(out).encode("utf-8")


TABLE_COLUMNS = [
    "Concurrent Users",
    "Response Time (ms)",
    "Throughput (TPS)",
    "CPU Utilization (%)",
    "Memory Utilization (%)",
    "Network Usage (KB/s)",
]


def table_row(report: dict[str, Any]) -> list[str]:
    users = report.get("concurrent_users")
    return [
        str(users) if users is not None else "-",
        format(report["latency_ms"]["mean"], ".3f"),
        format(report["throughput_tps"], ".3f"),
        format(report["cpu_percent"]["aggregate"], ".3f"),
        format(report["memory_percent"]["aggregate"], ".3f"),
        format(report["network_kbps"], ".3f"),
    ]


def table_bytes(reports: list[dict[str, Any]]) -> bytes:
    lines = [",".join(TABLE_COLUMNS)]
    for rep in reports:
        lines.append(",".join(table_row(rep)))
    return ("\n".join(lines) + "\n").encode("utf-8")


# --------------------------------------------------------------------------
# Report comparison


def _ordering(a: float | None, b: float | None) -> str:
    if a is None or b is None:
        return "n/a"
    if a < b:
        return "A<B"
    if a > b:
        return "A>B"
    return "A=B"


def compare(report_a: dict[str, Any], report_b: dict[str, Any]) -> dict[str, Any]:
    """Per-metric ratios and orderings for two runs of one scenario family."""
    if report_a["family"] != report_b["family"]:
        raise ScenarioMismatch(
            f'{report_a["family"]} vs {report_b["family"]}')

    def metric(path: list[str], rep: dict[str, Any]) -> float | None:
        node: Any = rep
        for p in path:
            if node is None:
                return None
            node = node.get(p)
        return node

    metrics = {
        "latency_mean_ms": ["latency_ms", "mean"],
        "latency_p95_ms": ["latency_ms", "p95"],
        "throughput_tps": ["throughput_tps"],
        "error_rate": ["error_rate"],
        "cpu_aggregate_pct": ["cpu_percent", "aggregate"],
        "network_entry_delay_ms": ["network_entry_delay_ms"],
        "recovery_time_ms": ["recovery_time_ms"],
    }
    rows: dict[str, Any] = {}
    for name, path in metrics.items():
        a = metric(path, report_a)
        b = metric(path, report_b)
        ratio = (a / b) if (a is not None and b not in (None, 0)) else None
        rows[name] = {"a": a, "b": b, "ratio": ratio, "ordering": _ordering(a, b)}
    return {
        "format_version": 1,
        "family": report_a["family"],
        "a": report_a["scenario_id"],
        "b": report_b["scenario_id"],
        "metrics": rows,
    }
