"""Simulation runtime: wires the engine, platform, control plane, traffic
policies, resilience pipeline, saga orchestration, workloads, faults, and
telemetry into one deterministic run.

Execution model
---------------
A request arrives (RequestArrival), is shed or admitted to a gateway
instance, and holds that slot for its whole lifetime: the gateway is the
orchestrator, so coordinator load is visible in gateway utilization.
Endpoint execution on any instance runs compute, then sequential database
queries, then downstream calls (consecutive parallel entries fan out and
join); the slot is held throughout, which is what lets slow dependencies
back up callers, and what the circuit breaker is there to stop.

Downstream calls run through the resilience pipeline: bulkhead, breaker,
discover+pick, delivery, per-attempt timeout, retries with backoff and
re-discovery. Deadlines propagate: a child call never outlives its
parent's remaining budget, so the span tree stays well nested. A caller
that times out orphans its callee: the callee finishes its compute and
database work (side effects land; the reservation ledger's tombstones
keep sagas consistent) but initiates no further downstream calls.

The monolith baseline executes the same endpoint trees flattened:
sequential, in-process, one slot for the whole request, one shared
database, ledger commits applied atomically at completion.
"""

from __future__ import annotations

from collections import deque
from typing import Callable

from tripsim import catalog as cat
from tripsim import engine as ev
from tripsim.control_plane import (AutoscalePolicy, ConfigStore,
                                   NoHealthyInstance, Registry,
                                   evaluate_scaling)
from tripsim.engine import Engine, SimTime
from tripsim.faults import (DbOverload, FaultState, KillInstances,
                            NetworkDelay, PartitionService, SagaStepFault,
                            SlowInstances, TimedConfigUpdate)
from tripsim.resilience import (Bulkhead, BreakerParams, CircuitBreaker,
                                MessageQueue, RetryPolicy,
                                breaker_counts_as_failure, degrade_shed_set)
from tripsim.saga import ReservationLedger, SagaInstance, SagaState, audit_saga
from tripsim.services import (ConservationCounters, DatabaseModel,
                              EndpointSpec, InstanceDown, InstanceState,
                              Request, ServiceInstance, MONOLITH)
from tripsim.telemetry import Outcome, RunRecord, TickSample, TraceLog
from tripsim.traffic import LbPolicy, LoadBalancer
from tripsim.workloads import build_generator

COMPENSATION_RETRYABLE = frozenset({Outcome.TIMEOUT, Outcome.CRASHED,
                                    Outcome.REJECTED, Outcome.NO_HEALTHY,
                                    Outcome.FAST_FAIL})


class Tuning:
    """Hot-path snapshot of the config store; rebuilt on every update."""

    def __init__(self, cfg: ConfigStore):
        g = cfg.get
        self.call_timeout_us = ev.ms(g("timeout.call_ms"))
        self.client_timeout_us = ev.ms(g("client.timeout_ms"))
        self.fast_fail_us = ev.ms(g("breaker.fast_fail_overhead_ms"))
        self.entry_delay_us = ev.ms(g("network.entry_delay_ms"))
        self.interservice_us = ev.ms(g("network.interservice_delay_ms"))
        self.breaker_enabled = g("breaker.enabled")
        self.breaker_params = BreakerParams(
            window=g("breaker.window"),
            min_calls=g("breaker.min_calls"),
            failure_ratio=g("breaker.failure_ratio"),
            open_duration_us=ev.ms(g("breaker.open_duration_ms")),
            half_open_probes=g("breaker.half_open_probes"),
        )
        self.retry = RetryPolicy(
            max_attempts=g("retry.max_attempts"),
            backoff_base_us=ev.ms(g("retry.backoff_base_ms")),
            backoff_multiplier=g("retry.backoff_multiplier"),
        )
        self.compensation = RetryPolicy(
            max_attempts=g("saga.compensation_retries"),
            backoff_base_us=ev.ms(g("saga.compensation_backoff_ms")),
            backoff_multiplier=1.0,
            retryable=COMPENSATION_RETRYABLE,
        )
        self.bulkhead_limit = g("bulkhead.limit")  # 0 disables
        self.db_multiplier = g("db.query_time_multiplier")
        self.hb_interval_us = ev.ms(g("registry.heartbeat_interval_ms"))
        self.eviction_misses = g("registry.eviction_misses")
        self.degrade_enabled = g("degrade.enabled")
        self.degrade_ceiling_ms = g("degrade.latency_ceiling_ms")
        self.degrade_watermark = g("degrade.shed_watermark_pct")
        self.degrade_window_us = ev.ms(g("degrade.window_ms"))
        self.autoscale_enabled = g("autoscale.enabled")
        self.autoscale = AutoscalePolicy(
            high_watermark=g("autoscale.high_watermark_pct"),
            low_watermark=g("autoscale.low_watermark_pct"),
            window_us=ev.ms(g("autoscale.window_ms")),
            cooldown_us=ev.ms(g("autoscale.cooldown_ms")),
            min_instances=g("autoscale.min_instances"),
            max_instances=g("autoscale.max_instances"),
            startup_delay_us=ev.ms(g("autoscale.startup_delay_ms")),
        )
        self.tick_us = ev.ms(g("report.tick_ms"))
        self.mem_footprint = g("memory.footprint_units")
        self.mem_per_inflight = g("memory.per_inflight_units")
        self.mem_node = g("memory.node_units")


class SagaInjector:
    """Forces outcomes on saga step attempts (consistency sweeps).

    Static plans come from the scenario's saga_faults section; chaos mode
    derives a fresh random plan per saga from the seeded "chaos" stream.
    """

    MODES = ("Timeout", "InstanceCrashed", "Rejected", "PaymentDeclined")

    def __init__(self, plan: list[SagaStepFault], chaos: bool, sim: "Simulation"):
        self.static = {(f.step, f.stage): f for f in plan}
        self.chaos = chaos
        self.sim = sim
        self._plans: dict[int, dict[tuple[str, str], tuple[str, int | None]]] = {}
        self._counts: dict[tuple[int, str, str], int] = {}

    def _plan_for(self, saga_id: int) -> dict[tuple[str, str], tuple[str, int | None]]:
        plan = self._plans.get(saga_id)
        if plan is not None:
            return plan
        plan = {(f.step, f.stage): (f.mode, f.attempts) for f in self.static.values()}
        if self.chaos:
            stream = self.sim.engine.stream("chaos")
            for step in ("flight", "hotel", "payment"):
                if stream.uniform_double() < 0.35:
                    mode = self.MODES[stream.next_u64() % 4]
                    if mode == "PaymentDeclined" or stream.uniform_double() < 0.5:
                        attempts = None  # terminal for the step
                    else:
                        attempts = 1 + stream.next_u64() % 2  # transient
                    plan[(step, "forward")] = (mode, attempts)
                if stream.uniform_double() < 0.25:
                    mode = self.MODES[stream.next_u64() % 3]  # infra modes only
                    attempts = 1 + stream.next_u64() % 3  # under the budget of 5
                    plan[(step, "compensation")] = (mode, attempts)
        self._plans[saga_id] = plan
        return plan

    def check(self, saga_id: int, step: str, stage: str, attempt_no: int) -> str | None:
        """Outcome name to force for this attempt, or None."""
        entry = self._plan_for(saga_id).get((step, stage))
        if entry is None:
            return None
        mode, attempts = entry
        if attempts is not None:
            key = (saga_id, step, stage)
            used = self._counts.get(key, 0)
            if used >= attempts:
                return None
            self._counts[key] = used + 1
        return mode


class RootFlow:
    """One end-to-end request from arrival to the response event."""

    __slots__ = ("sim", "request", "route", "span", "done_cb", "deadline_at",
                 "settled", "gateway_ctx", "outcome")

    def __init__(self, sim: "Simulation", request: Request, route, span, done_cb):
        self.sim = sim
        self.request = request
        self.route = route
        self.span = span
        self.done_cb = done_cb
        self.deadline_at = request.timeout_at
        self.settled = False
        self.gateway_ctx: ExecCtx | None = None
        self.outcome: Outcome | None = None

    def settle(self, outcome: Outcome, detail: str | None = None) -> None:
        """Finish platform-side work; response reaches the client after the
        entry network delay."""
        if self.settled:
            return
        self.settled = True
        self.outcome = outcome
        delay = self.sim.entry_delay_total()
        self.sim.engine.schedule_in(delay, ev.HopComplete(self, "respond", 0))

    def on_respond(self) -> None:
        self.sim.finish_root(self, self.outcome)

    def on_timeout(self, marker: int = 0) -> None:
        """Client gave up waiting; the platform-side work is orphaned."""
        if self.settled:
            return
        if self.gateway_ctx is not None:
            self.gateway_ctx.orphan()
        self.settle(Outcome.TIMEOUT, "client deadline")


class DbJob:
    """One database query holding a db slot; survives its caller's death."""

    __slots__ = ("sim", "ctx", "db", "query_us")

    def __init__(self, sim: "Simulation", ctx, db: DatabaseModel, query_us: SimTime):
        self.sim = sim
        self.ctx = ctx
        self.db = db
        self.query_us = query_us

    def on_slot(self, now: SimTime) -> None:
        self.sim.engine.schedule_in(self.query_us, ev.HopComplete(self, "db", 0))

    def on_query_done(self) -> None:
        self.db.complete(self.sim.engine.now)
        self.ctx.on_db_done()


class ExecCtx:
    """Execution of one endpoint call on one instance.

    Drives compute -> db queries -> downstream groups -> completion.
    ``orphan()`` detaches the caller: compute and db work still finish (and
    the ledger effect lands) but no further downstream work starts.
    """

    __slots__ = ("sim", "endpoint", "instance", "request", "saga_ctx",
                 "on_finished", "parent_span", "deadline_at", "dead",
                 "orphaned", "phase", "db_left", "groups", "group_idx",
                 "pending_children", "children", "first_failure", "saga_runner")

    def __init__(self, sim: "Simulation", endpoint: EndpointSpec,
                 instance: ServiceInstance, request: Request,
                 saga_ctx: tuple[int, str, str] | None,
                 parent_span, deadline_at: SimTime | None,
                 on_finished: Callable[[Outcome, str | None], None]):
        self.sim = sim
        self.endpoint = endpoint
        self.instance = instance
        self.request = request
        self.saga_ctx = saga_ctx
        self.parent_span = parent_span
        self.deadline_at = deadline_at
        self.on_finished = on_finished
        self.dead = False
        self.orphaned = False
        self.phase = "queued"
        self.db_left = 0
        self.groups: list[list] = []
        self.group_idx = 0
        self.pending_children = 0
        self.children: list[ResilientCall] = []
        self.first_failure: tuple[Outcome, str | None] | None = None
        self.saga_runner: SagaRunner | None = None

    # -- instance SlotJob interface

    def on_slot(self, now: SimTime) -> None:
        self.phase = "compute"
        self.sim.note_running(self)
        kind = self.endpoint.service
        compute = self.sim.draw_service_time(kind, self.endpoint.service_time)
        self.sim.engine.schedule_in(compute, ev.HopComplete(self, "compute", 0))

    def on_crashed(self, now: SimTime) -> None:
        self.dead = True
        for child in self.children:
            child.cancel()
        self.sim.drop_running(self)
        if not self.orphaned:
            self.on_finished(Outcome.CRASHED, None)

    def orphan(self) -> None:
        """Caller gave up; finish local work but start nothing new."""
        self.orphaned = True
        for child in self.children:
            child.cancel()
        if self.saga_runner is not None:
            self.saga_runner.on_cancelled()

    # -- phase transitions

    def on_compute_done(self) -> None:
        if self.dead:
            return
        db = self.endpoint.db
        if db is not None:
            self.phase = "db"
            self.db_left = db.queries
            self._next_query()
            return
        self._enter_downstream()

    def _next_query(self) -> None:
        db_model = self.sim.database_for(self.endpoint.service)
        query_us = self.sim.draw_db_time(self.endpoint)
        db_model.admit(DbJob(self.sim, self, db_model, query_us), self.sim.engine.now)

    def on_db_done(self) -> None:
        if self.dead:
            return
        self.db_left -= 1
        if self.db_left > 0:
            self._next_query()
        else:
            self._enter_downstream()

    def _enter_downstream(self) -> None:
        if self.orphaned:
            self._complete()
            return
        if self.endpoint.saga is not None:
            self.phase = "saga"
            self.saga_runner = SagaRunner(self.sim, self,
                                          self.sim.sagas[self.endpoint.saga])
            self.saga_runner.start()
            return
        self.groups = _group_downstream(self.endpoint)
        self.group_idx = 0
        self.phase = "downstream"
        self._launch_group()

    def _launch_group(self) -> None:
        if self.orphaned:
            self._complete()
            return
        if self.group_idx >= len(self.groups):
            if self.first_failure is not None:
                outcome, detail = self.first_failure
                self._fail(outcome, detail)
            else:
                self._complete()
            return
        group = self.groups[self.group_idx]
        self.pending_children = len(group)
        self.children = []
        for call_ref in group:
            target = self.sim.endpoints[call_ref.endpoint]
            call = ResilientCall(self.sim, caller_kind=self.endpoint.service,
                                 endpoint=target, request=self.request,
                                 parent_span=self._own_span(),
                                 deadline_at=self.deadline_at,
                                 saga_ctx=None,
                                 on_done=self._on_child_done)
            self.children.append(call)
        for call in list(self.children):
            call.start()

    def _own_span(self):
        return self.parent_span

    def _on_child_done(self, outcome: Outcome, detail: str | None) -> None:
        if self.dead:
            return
        self.pending_children -= 1
        if outcome is not Outcome.SUCCESS and self.first_failure is None:
            self.first_failure = (outcome, detail)
        if self.pending_children == 0:
            self.children = []
            self.group_idx += 1
            self._launch_group()

    def saga_finished(self, outcome: Outcome, detail: str | None) -> None:
        if self.dead:
            return
        if outcome is Outcome.SUCCESS:
            self._complete()
        else:
            self._fail(outcome, detail)

    def _apply_ledger(self) -> None:
        action = self.endpoint.ledger_action
        if action is not None and self.saga_ctx is not None:
            op, counter = action
            saga_id = self.saga_ctx[0]
            if op == "reserve":
                self.sim.ledger.reserve(counter, saga_id)
            else:
                self.sim.ledger.release(counter, saga_id)

    def _complete(self) -> None:
        self._apply_ledger()
        self._release()
        if not self.orphaned:
            self.on_finished(Outcome.SUCCESS, None)

    def _fail(self, outcome: Outcome, detail: str | None) -> None:
        # Failed calls do not apply their own side effect (the failure
        # reached us before the endpoint finished its work).
        self._release()
        if not self.orphaned:
            self.on_finished(outcome, detail)

    def _release(self) -> None:
        self.phase = "done"
        self.dead = True
        self.sim.drop_running(self)
        self.instance.complete(self.sim.engine.now)


def _group_downstream(endpoint: EndpointSpec) -> list[list]:
    """Consecutive parallel entries form one fan-out group; sequential
    entries run alone, in order."""
    groups: list[list] = []
    run: list = []
    for call in endpoint.downstream:
        if call.parallel:
            run.append(call)
        else:
            if run:
                groups.append(run)
                run = []
            groups.append([call])
    if run:
        groups.append(run)
    return groups


class ResilientCall:
    """One logical downstream call: bulkhead -> breaker -> discover+pick ->
    delivery -> per-attempt timeout, with retries and failover."""

    __slots__ = ("sim", "caller_kind", "endpoint", "request", "parent_span",
                 "deadline_at", "saga_ctx", "on_done", "policy",
                 "bypass_breaker", "attempt_no", "cancelled", "finished",
                 "span", "probe", "ctx", "attempt_deadline", "instance",
                 "settled_attempt", "bulkhead")

    def __init__(self, sim: "Simulation", caller_kind: str, endpoint: EndpointSpec,
                 request: Request, parent_span, deadline_at: SimTime | None,
                 saga_ctx: tuple[int, str, str] | None,
                 on_done: Callable[[Outcome, str | None], None],
                 policy: RetryPolicy | None = None,
                 bypass_breaker: bool = False):
        self.sim = sim
        self.caller_kind = caller_kind
        self.endpoint = endpoint
        self.request = request
        self.parent_span = parent_span
        self.deadline_at = deadline_at
        self.saga_ctx = saga_ctx
        self.on_done = on_done
        self.policy = policy or sim.tuning.retry
        self.bypass_breaker = bypass_breaker
        self.attempt_no = 0
        self.cancelled = False
        self.finished = False
        self.span = None
        self.probe = False
        self.ctx: ExecCtx | None = None
        self.instance: ServiceInstance | None = None
        self.attempt_deadline: SimTime | None = None
        self.settled_attempt = False
        self.bulkhead: Bulkhead | None = None

    def cancel(self) -> None:
        self.cancelled = True

    def start(self) -> None:
        self._attempt()

    # -- one attempt

    def _attempt(self) -> None:
        sim = self.sim
        now = sim.engine.now
        self.attempt_no += 1
        self.settled_attempt = False
        self.probe = False
        self.ctx = None
        self.instance = None
        callee = self.endpoint.service
        self.span = sim.trace.open(self.request.trace_id,
                                   self.parent_span.span_id if self.parent_span else None,
                                   self.caller_kind, callee, self.endpoint.ref,
                                   now, attempt=self.attempt_no)

        forced = sim.injected_outcome(self)
        if forced is not None:
            self._start_forced(forced)
            return

        if self.deadline_at is not None and now >= self.deadline_at:
            self._settle(Outcome.TIMEOUT, "deadline exhausted")
            return

        limit = sim.tuning.bulkhead_limit
        if limit and not self.bypass_breaker:
            bulkhead = sim.bulkhead_for(self.caller_kind, callee, limit)
            if not bulkhead.try_acquire():
                self._settle(Outcome.BULKHEAD_FULL, None)
                return
            self.bulkhead = bulkhead

        if sim.tuning.breaker_enabled and not self.bypass_breaker:
            breaker = sim.breaker_for(self.caller_kind, callee)
            gate = breaker.allow(now)
            if gate == "fast_fail":
                sim.engine.schedule_in(sim.tuning.fast_fail_us,
                                       ev.HopComplete(self, "fastfail", self.attempt_no))
                return
            self.probe = gate == "probe"

        self.attempt_deadline = now + sim.tuning.call_timeout_us
        if self.deadline_at is not None:
            self.attempt_deadline = min(self.attempt_deadline, self.deadline_at)
        sim.engine.schedule_at(self.attempt_deadline,
                               ev.CallTimeout(self, self.attempt_no))

        if sim.fault_state.is_partitioned(callee):
            return  # black hole: the timeout will fire

        try:
            candidates = sim.candidates(callee)
        except NoHealthyInstance:
            self._settle(Outcome.NO_HEALTHY, None)
            return
        lb = sim.lb_for(callee)
        instance = lb.pick(candidates, self.request.user_key)
        self.instance = instance

        hop_extra = sim.fault_state.hop_extra_us(self.caller_kind, callee)
        transit = sim.tuning.interservice_us + hop_extra
        if transit > 0:
            sim.engine.schedule_in(transit, ev.HopComplete(self, "deliver", self.attempt_no))
        else:
            self.on_delivered(self.attempt_no)

    def _start_forced(self, mode: str) -> None:
        """Injected saga-step failures (see SagaInjector)."""
        sim = self.sim
        now = sim.engine.now
        if mode == "Timeout":
            # Lost in transit: the callee never sees it, no side effect.
            fire = now + sim.tuning.call_timeout_us
            if self.deadline_at is not None:
                fire = min(fire, self.deadline_at)
            self.attempt_deadline = fire
            sim.engine.schedule_at(fire, ev.CallTimeout(self, self.attempt_no))
            return
        if mode == "InstanceCrashed":
            self._settle(Outcome.CRASHED, "injected")
            return
        if mode == "Rejected":
            self._settle(Outcome.REJECTED, "injected")
            return
        # PaymentDeclined: the service answers after its usual time, no effect.
        delay = sim.draw_service_time(self.endpoint.service, self.endpoint.service_time)
        sim.engine.schedule_in(delay, ev.HopComplete(self, "declined", self.attempt_no))

    def on_delivered(self, marker: int) -> None:
        if marker != self.attempt_no or self.settled_attempt:
            return
        now = self.sim.engine.now
        instance = self.instance
        ctx = ExecCtx(self.sim, self.endpoint, instance, self.request,
                      self.saga_ctx, self.span, self.attempt_deadline,
                      self._on_ctx_finished)
        try:
            result = instance.admit(ctx, now)
        except InstanceDown:
            self.sim.lb_for(self.endpoint.service).note_failure(instance.id)
            self._settle(Outcome.CRASHED, "connection refused")
            return
        if result == "rejected":
            self._settle(Outcome.REJECTED, None)
            return
        self.ctx = ctx

    def _on_ctx_finished(self, outcome: Outcome, detail: str | None) -> None:
        self._settle(outcome, detail)

    def on_fastfail_elapsed(self, marker: int) -> None:
        if marker != self.attempt_no or self.settled_attempt:
            return
        self._settle(Outcome.FAST_FAIL, None, record_breaker=False)

    def on_declined_elapsed(self, marker: int) -> None:
        if marker != self.attempt_no or self.settled_attempt:
            return
        self._settle(Outcome.BUSINESS, "PaymentDeclined")

    def on_timeout(self, marker: int) -> None:
        if marker != self.attempt_no or self.settled_attempt or self.finished:
            return
        if self.ctx is not None:
            self.ctx.orphan()
        self._settle(Outcome.TIMEOUT, None)

    # -- settlement and retry

    def _settle(self, outcome: Outcome, detail: str | None,
                record_breaker: bool = True) -> None:
        if self.settled_attempt:
            return
        self.settled_attempt = True
        sim = self.sim
        now = sim.engine.now
        sim.trace.close(self.span, now, outcome, detail)
        if self.bulkhead is not None:
            self.bulkhead.release()
            self.bulkhead = None
        if record_breaker and sim.tuning.breaker_enabled and not self.bypass_breaker:
            breaker = sim.breaker_for(self.caller_kind, self.endpoint.service)
            failure = breaker_counts_as_failure(outcome)
            was_open = breaker.state.value
            breaker.record(not failure, self.probe, now)
            if breaker.state.value == "open" and was_open != "open":
                sim.engine.schedule_in(breaker.params.open_duration_us,
                                       ev.BreakerProbeWindow(
                                           (self.caller_kind, self.endpoint.service),
                                           breaker.open_seq))
        if self.instance is not None:
            lb = sim.lb_for(self.endpoint.service)
            if outcome is Outcome.SUCCESS:
                lb.note_success(self.instance.id)
            elif outcome in (Outcome.CRASHED, Outcome.TIMEOUT):
                lb.note_failure(self.instance.id)

        if outcome is Outcome.SUCCESS or self.cancelled:
            self._finish(outcome, detail)
            return
        if self.policy.should_retry(outcome, self.attempt_no):
            backoff = self.policy.backoff_us(self.attempt_no)
            if self.deadline_at is None or now + backoff < self.deadline_at:
                sim.engine.schedule_in(backoff, ev.RetryFire(self, self.attempt_no + 1))
                return
        self._finish(outcome, detail)

    def on_retry_fire(self, attempt_no: int) -> None:
        if self.finished or self.cancelled or attempt_no != self.attempt_no + 1:
            return
        self._attempt()

    def _finish(self, outcome: Outcome, detail: str | None) -> None:
        if self.finished:
            return
        self.finished = True
        if not self.cancelled:
            self.on_done(outcome, detail)


class SagaRunner:
    """Drives one booking saga through the resilience pipeline.

    Forward steps use the normal retry policy; compensations bypass the
    breaker and bulkhead (consistency outranks load shedding) and carry
    their own retry budget. On completion the notification message is
    enqueued on the durable queue.
    """

    def __init__(self, sim: "Simulation", gateway_ctx: ExecCtx, definition):
        self.sim = sim
        self.ctx = gateway_ctx
        self.definition = definition
        self.instance = SagaInstance(definition, sim.next_saga_id(),
                                     gateway_ctx.request.trace_id,
                                     compensation_budget=1)
        sim.saga_instances.append(self.instance)
        self.cancelled = False

    def start(self) -> None:
        self._dispatch(self.instance.start())

    def _dispatch(self, action) -> None:
        sim = self.sim
        if action.kind == "forward":
            self._call(action.step, "forward")
        elif action.kind == "compensate":
            self._call(action.step, "compensation")
        elif action.kind == "completed":
            sim.mq.enqueue(self.instance.id, self.instance.trace_id,
                           self.definition.async_tail, sim.engine.now)
            sim.kick_deliveries()
            self.ctx.saga_finished(Outcome.SUCCESS, None)
        elif action.kind == "compensated":
            outcome, detail = self._failure_outcome()
            self.ctx.saga_finished(outcome, detail)
        else:  # stuck
            sim.sagas_stuck += 1
            outcome, detail = self._failure_outcome()
            self.ctx.saga_finished(outcome, f"saga stuck; {detail or ''}".strip())

    def _failure_outcome(self) -> tuple[Outcome, str | None]:
        name = self.instance.failure or "Timeout"
        if name == "PaymentDeclined":
            return Outcome.BUSINESS, "PaymentDeclined"
        try:
            return Outcome(name), None
        except ValueError:
            return Outcome.BUSINESS, name

    def _call(self, step, stage: str) -> None:
        sim = self.sim
        compensating = stage == "compensation"
        endpoint = sim.endpoints[step.compensation if compensating else step.forward]
        call = ResilientCall(
            sim, caller_kind=self.ctx.endpoint.service, endpoint=endpoint,
            request=self.ctx.request, parent_span=self.ctx.parent_span,
            deadline_at=None if compensating else self.ctx.deadline_at,
            saga_ctx=(self.instance.id, step.name, stage),
            on_done=(self._on_comp_result if compensating else self._on_forward_result),
            policy=(sim.tuning.compensation if compensating else None),
            bypass_breaker=compensating,
        )
        call.start()

    def _on_forward_result(self, outcome: Outcome, detail: str | None) -> None:
        inst = self.instance
        if self.ctx.dead and self.ctx.phase == "saga":
            # Coordinator crashed: orchestration state is lost, the saga is
            # abandoned mid-flight (it stays non-terminal in the stats).
            return
        if outcome is Outcome.SUCCESS:
            action = inst.forward_succeeded()
            if self.cancelled and inst.state is SagaState.RUNNING:
                action = inst.forward_failed(Outcome.TIMEOUT.value, ambiguous=False)
            self._dispatch(action)
            return
        name = detail if (outcome is Outcome.BUSINESS and detail) else outcome.value
        ambiguous = outcome is Outcome.TIMEOUT
        self._dispatch(inst.forward_failed(name, ambiguous))

    def _on_comp_result(self, outcome: Outcome, detail: str | None) -> None:
        if self.ctx.dead and self.ctx.phase == "saga":
            return
        if outcome is Outcome.SUCCESS:
            self._dispatch(self.instance.compensation_succeeded())
        else:
            self._dispatch(self.instance.compensation_failed())

    def on_cancelled(self) -> None:
        self.cancelled = True


class DeliveryJob:
    """One message delivery occupying a notification-service slot."""

    __slots__ = ("sim", "msg", "instance", "dead")

    def __init__(self, sim: "Simulation", msg, instance: ServiceInstance):
        self.sim = sim
        self.msg = msg
        self.instance = instance
        self.dead = False

    def on_slot(self, now: SimTime) -> None:
        self.sim.note_running(self)
        endpoint = self.sim.endpoints[self.msg.endpoint]
        took = self.sim.draw_service_time(endpoint.service, endpoint.service_time)
        self.sim.engine.schedule_in(took, ev.MessageDeliver(self, self.msg.id))

    def on_delivered(self) -> None:
        if self.dead:
            return
        self.sim.drop_running(self)
        self.instance.complete(self.sim.engine.now)
        self.sim.mq.ack(self.msg.id)
        self.sim.kick_deliveries()

    def on_crashed(self, now: SimTime) -> None:
        self.dead = True
        self.sim.drop_running(self)
        self.sim.mq.nack(self.msg.id)


class MonoJob:
    """Monolith request: the flattened call tree as one sequential job.

    Holds a single slot; database queries hit the shared database; ledger
    effects buffer and commit atomically at completion (a crash rolls the
    local transaction back).
    """

    __slots__ = ("sim", "flow", "ops", "idx", "dead", "ledger_ops", "saga_id",
                 "background")

    def __init__(self, sim: "Simulation", flow: RootFlow | None, ops: list,
                 saga_id: int | None, background: bool = False):
        self.sim = sim
        self.flow = flow
        self.ops = ops
        self.idx = 0
        self.dead = False
        self.ledger_ops: list[tuple[str, str]] = []
        self.saga_id = saga_id
        self.background = background

    def on_slot(self, now: SimTime) -> None:
        self.sim.note_running(self)
        self._advance()

    def _advance(self) -> None:
        if self.dead:
            return
        sim = self.sim
        if self.idx >= len(self.ops):
            if self.saga_id is not None:
                for op, counter in self.ledger_ops:
                    if op == "reserve":
                        sim.ledger.reserve(counter, self.saga_id)
                    else:
                        sim.ledger.release(counter, self.saga_id)
            self.dead = True
            sim.drop_running(self)
            sim.monolith.complete(sim.engine.now)
            if self.flow is not None:
                self.flow.settle(Outcome.SUCCESS)
            if not self.background:
                sim.schedule_mono_background_jobs(self)
            return
        op = self.ops[self.idx]
        self.idx += 1
        if op[0] == "compute":
            _, kind, dist, ledger_action = op
            if ledger_action is not None:
                self.ledger_ops.append(ledger_action)
            took = sim.draw_service_time(kind, dist)
            sim.engine.schedule_in(took, ev.HopComplete(self, "mono", 0))
        else:  # ("db", endpoint)
            _, endpoint = op
            db = sim.database_for(MONOLITH)
            query_us = sim.draw_db_time(endpoint)
            db.admit(DbJob(sim, self, db, query_us), sim.engine.now)

    def on_compute_done(self) -> None:
        self._advance()

    def on_db_done(self) -> None:
        self._advance()

    def on_crashed(self, now: SimTime) -> None:
        self.dead = True
        self.sim.drop_running(self)
        if self.flow is not None:
            self.flow.settle(Outcome.CRASHED)


class Simulation:
    """One scenario, one engine, one deterministic run."""

    def __init__(self, scenario):
        self.sc = scenario
        self.engine = Engine(scenario.seed)
        self.duration_us = scenario.duration_us
        self.cfg = ConfigStore(scenario.config_values())
        self.tuning = Tuning(self.cfg)
        self.endpoints = cat.build_endpoints(scenario.endpoint_overrides)
        self.routes = cat.default_route_table(scenario.critical_overrides)
        self.sagas = cat.SAGAS
        self.trace = TraceLog()
        self.counters = ConservationCounters()
        self.ledger = ReservationLedger()
        self.registry = Registry(self.tuning.eviction_misses)
        self.fault_state = FaultState()
        self.mq = MessageQueue()
        self.monolith: ServiceInstance | None = None
        self.instances: dict[str, ServiceInstance] = {}
        self.pools: dict[str, list[ServiceInstance]] = {}
        self.databases: dict[str, DatabaseModel] = {}
        self._db_base_capacity: dict[str, int] = {}
        self.lbs: dict[str, LoadBalancer] = {}
        self.breakers: dict[tuple[str, str], CircuitBreaker] = {}
        self.bulkheads: dict[tuple[str, str], Bulkhead] = {}
        self._next_index: dict[str, int] = {}
        self._running: dict[str, set] = {}
        self._live_flows: set[RootFlow] = set()
        self.saga_instances: list[SagaInstance] = []
        self.sagas_stuck = 0
        self._saga_seq = 0
        self._req_seq = 0
        self.samples: list[TickSample] = []
        self._busy_prev: dict[str, int] = {}
        self.instance_timeline: dict[str, list[tuple[SimTime, int]]] = {}
        self.scale_log: list[tuple[SimTime, str, str, int]] = []
        self._scale_last: dict[str, SimTime] = {}
        self._kind_busy_hist: dict[str, list[tuple[SimTime, int, int]]] = {}
        self.shed_set: set[str] = set()
        self.shed_log: list[tuple[SimTime, str]] = []
        self._recent_roots: list[tuple[SimTime, SimTime]] = []
        self._degrade_busy_mark: tuple[SimTime, int] = (0, 0)
        self.injector = SagaInjector(scenario.saga_faults,
                                     scenario.meta.get("saga_chaos", False), self)
        self.fault_inject_us: SimTime | None = None
        self.workload = (build_generator(scenario.workload, self)
                         if scenario.workload is not None else None)
        self._wire_handlers()
        self._deploy()
        self._schedule_faults()
        self._schedule_ticks()

    # ------------------------------------------------------------------
    # wiring

    def _wire_handlers(self) -> None:
        e = self.engine
        e.register(ev.RequestArrival, lambda p: self._on_request_arrival(p.request))
        e.register(ev.HopComplete, self._on_hop_complete)
        e.register(ev.HeartbeatTick, lambda p: self._on_heartbeat_tick(p.instance_id))
        e.register(ev.HeartbeatDeadline,
                   lambda p: self._on_heartbeat_deadline(p.instance_id, p.beat_count))
        e.register(ev.FaultInject, lambda p: self._on_fault_inject(p.fault))
        e.register(ev.FaultClear, lambda p: self._on_fault_clear(p.fault))
        e.register(ev.ScaleEvaluate, lambda p: self._on_scale_evaluate(p.kind))
        e.register(ev.InstanceReady, lambda p: self._on_instance_ready(p.instance_id))
        e.register(ev.ConfigUpdate, lambda p: self._on_config_update(p.key, p.value))
        e.register(ev.BreakerProbeWindow,
                   lambda p: self._on_breaker_probe_window(p.breaker_key, p.open_seq))
        e.register(ev.WorkloadTick, lambda p: p.generator.on_tick(p.token))
        e.register(ev.MessageDeliver, lambda p: p.delivery.on_delivered())
        e.register(ev.CallTimeout, lambda p: p.attempt.on_timeout(p.marker))
        e.register(ev.RetryFire, lambda p: p.call.on_retry_fire(p.attempt_no))
        e.register(ev.MetricsTick, lambda p: self._on_metrics_tick(p.index))
        e.register(ev.DegradeEvaluate, lambda p: self._on_degrade_evaluate(p.index))

    def _on_hop_complete(self, p: ev.HopComplete) -> None:
        stage = p.stage
        if stage == "compute":
            p.ctx.on_compute_done()
        elif stage == "db":
            p.ctx.on_query_done()
        elif stage == "deliver":
            p.ctx.on_delivered(p.marker)
        elif stage == "fastfail":
            p.ctx.on_fastfail_elapsed(p.marker)
        elif stage == "declined":
            p.ctx.on_declined_elapsed(p.marker)
        elif stage == "mono":
            p.ctx.on_compute_done()
        elif stage == "respond":
            p.ctx.on_respond()
        else:
            raise AssertionError(f"unknown hop stage {stage}")

    # ------------------------------------------------------------------
    # deployment

    def _deploy(self) -> None:
        now = self.engine.now
        if self.sc.mode == "monolith":
            total_slots = sum(self.sc.instances[k] * self.sc.capacity.get(k, cat.DEFAULT_CAPACITY)
                              for k in self.sc.instances)
            total_instances = sum(self.sc.instances.values())
            inst = ServiceInstance(MONOLITH, 0, total_slots,
                                   self.sc.queue_bound * total_instances, now)
            self.monolith = inst
            self.instances[inst.id] = inst
            self.pools[MONOLITH] = [inst]
            self.databases[MONOLITH] = DatabaseModel(MONOLITH,
                                                     self.sc.monolith_db_capacity)
            self._db_base_capacity[MONOLITH] = self.sc.monolith_db_capacity
            self._record_instance_count(MONOLITH)
            return
        for kind in sorted(self.sc.instances):
            count = self.sc.instances[kind]
            self.pools[kind] = []
            self._next_index[kind] = 0
            for _ in range(count):
                self._spawn_instance(kind, starting=False)
        for owner in cat.DB_OWNERS:
            capy = self.sc.db_capacity.get(owner, cat.DEFAULT_DB_CAPACITY)
            self.databases[owner] = DatabaseModel(owner, capy)
            self._db_base_capacity[owner] = capy

    def _spawn_instance(self, kind: str, starting: bool) -> ServiceInstance:
        now = self.engine.now
        index = self._next_index[kind]
        self._next_index[kind] = index + 1
        state = InstanceState.STARTING if starting else InstanceState.UP
        inst = ServiceInstance(kind, index, self.sc.capacity.get(kind, cat.DEFAULT_CAPACITY),
                               self.sc.queue_bound, now, state)
        self.instances[inst.id] = inst
        self.pools[kind].append(inst)
        if starting:
            self.engine.schedule_in(self.tuning.autoscale.startup_delay_us,
                                    ev.InstanceReady(inst.id))
        else:
            self._register_instance(inst)
        self._record_instance_count(kind)
        return inst

    def _register_instance(self, inst: ServiceInstance) -> None:
        now = self.engine.now
        self.registry.register(inst.id, inst.kind, inst.index, now)
        self.lb_for(inst.kind).note_membership(inst.id, True)
        self.engine.schedule_in(self.tuning.hb_interval_us, ev.HeartbeatTick(inst.id))
        self.engine.schedule_in(self.tuning.hb_interval_us,
                                ev.HeartbeatDeadline(inst.id, 0))
        if inst.kind == cat.NOTIFY:
            self.kick_deliveries()

    def _record_instance_count(self, kind: str) -> None:
        count = sum(1 for i in self.pools.get(kind, ())
                    if i.state is not InstanceState.DOWN)
        self.instance_timeline.setdefault(kind, []).append((self.engine.now, count))

    # ------------------------------------------------------------------
    # lookups

    def lb_for(self, kind: str) -> LoadBalancer:
        lb = self.lbs.get(kind)
        if lb is None:
            policy = self.cfg.get(f"lb.policy.{kind}") or self.cfg.get("lb.policy")
            lb = LoadBalancer(LbPolicy(policy), vnodes=self.cfg.get("lb.vnodes"))
            self.lbs[kind] = lb
        return lb

    def breaker_for(self, caller: str, callee: str) -> CircuitBreaker:
        key = (caller, callee)
        breaker = self.breakers.get(key)
        if breaker is None:
            breaker = CircuitBreaker(self.tuning.breaker_params)
            self.breakers[key] = breaker
        return breaker

    def bulkhead_for(self, caller: str, callee: str, limit: int) -> Bulkhead:
        key = (caller, callee)
        bh = self.bulkheads.get(key)
        if bh is None:
            bh = Bulkhead(limit)
            self.bulkheads[key] = bh
        bh.limit = limit
        return bh

    def candidates(self, kind: str) -> list[ServiceInstance]:
        entries = self.registry.discover(kind)
        out = [self.instances[e.instance_id] for e in entries]
        # Draining instances are registered (they finish accepted work)
        # but take nothing new; crashed-not-yet-evicted stay in rotation
        # and fail fast on contact.
        usable = [i for i in out
                  if i.state not in (InstanceState.DRAINING, InstanceState.STARTING)]
        if not usable:
            raise NoHealthyInstance(kind)
        return usable

    def database_for(self, kind: str) -> DatabaseModel:
        if self.monolith is not None:
            return self.databases[MONOLITH]
        return self.databases[kind]

    def draw_service_time(self, kind: str, dist) -> SimTime:
        base = self.engine.stream(f"svc.{kind}").sample(dist)
        return base + self.fault_state.service_extra_us(kind)

    def draw_db_time(self, endpoint: EndpointSpec) -> SimTime:
        dist = cat.scale_distribution(endpoint.db.query_time, self.tuning.db_multiplier)
        return self.engine.stream(f"db.{endpoint.service}").sample(dist)

    def pick_class(self, mix: dict[str, float], stream) -> str:
        u = stream.uniform_double()
        acc = 0.0
        names = sorted(mix)
        for name in names:
            acc += mix[name]
            if u < acc:
                return name
        return names[-1]

    def next_saga_id(self) -> int:
        self._saga_seq += 1
        return self._saga_seq

    def entry_delay_total(self) -> SimTime:
        return self.tuning.entry_delay_us + self.fault_state.entry_delay_extra

    def injected_outcome(self, call: ResilientCall) -> str | None:
        if call.saga_ctx is None:
            return None
        saga_id, step, stage = call.saga_ctx
        return self.injector.check(saga_id, step, stage, call.attempt_no)

    def note_running(self, job) -> None:
        self._running.setdefault(job.instance.id if hasattr(job, "instance")
                                 else MONOLITH, set()).add(job)

    def drop_running(self, job) -> None:
        key = job.instance.id if hasattr(job, "instance") else MONOLITH
        bucket = self._running.get(key)
        if bucket is not None:
            bucket.discard(job)

    # ------------------------------------------------------------------
    # request lifecycle

    def start_request(self, cls: str, user_key: str, done_cb) -> None:
        now = self.engine.now
        self._req_seq += 1
        route = self.routes.route(cls)
        request = Request(self._req_seq, self._req_seq, cls, now, user_key,
                          timeout_at=now + self.tuning.client_timeout_us)
        entry = self.endpoints[route.entry_endpoint]
        target = MONOLITH if self.monolith is not None else cat.GATEWAY
        span = self.trace.open(request.trace_id, None, "client", target,
                               entry.ref, now, cls=cls)
        span.bytes_total = entry.request_bytes + entry.response_bytes
        flow = RootFlow(self, request, route, span, done_cb)
        self.counters.issued += 1
        self._live_flows.add(flow)
        self.engine.schedule_at(now, ev.RequestArrival(flow))

    def _on_request_arrival(self, flow: RootFlow) -> None:
        now = self.engine.now
        if flow.request.cls in self.shed_set and not flow.route.critical:
            self.shed_log.append((now, flow.request.cls))
            flow.settle(Outcome.DEGRADED)
            return
        self.engine.schedule_at(flow.deadline_at, ev.CallTimeout(flow, 0))
        if self.monolith is not None:
            self._mono_admit(flow)
            return
        entry = self.endpoints[flow.route.entry_endpoint]
        try:
            candidates = self.candidates(cat.GATEWAY)
        except NoHealthyInstance:
            flow.settle(Outcome.NO_HEALTHY)
            return
        gw = self.lb_for(cat.GATEWAY).pick(candidates, flow.request.user_key)
        ctx = ExecCtx(self, entry, gw, flow.request, None, flow.span,
                      flow.deadline_at,
                      lambda outcome, detail, f=flow: f.settle(outcome, detail))
        flow.gateway_ctx = ctx
        try:
            result = gw.admit(ctx, now)
        except InstanceDown:
            self.lb_for(cat.GATEWAY).note_failure(gw.id)
            flow.settle(Outcome.CRASHED)
            return
        if result == "rejected":
            flow.settle(Outcome.REJECTED)

    def finish_root(self, flow: RootFlow, outcome: Outcome) -> None:
        now = self.engine.now
        self.trace.close(flow.span, now, outcome)
        self._live_flows.discard(flow)
        c = self.counters
        if outcome is Outcome.SUCCESS:
            c.completed += 1
            self._recent_roots.append((now, now - flow.span.start))
        elif outcome is Outcome.DEGRADED:
            c.shed += 1
        elif outcome is Outcome.REJECTED:
            c.rejected += 1
        else:
            c.failed += 1
        if flow.done_cb is not None:
            flow.done_cb(outcome)

    # ------------------------------------------------------------------
    # monolith execution

    def _mono_admit(self, flow: RootFlow) -> None:
        entry = self.endpoints[flow.route.entry_endpoint]
        ops = self._flatten(entry)
        saga_id = None
        if entry.saga is not None:
            saga_id = self.next_saga_id()
        job = MonoJob(self, flow, ops, saga_id)
        try:
            result = self.monolith.admit(job, self.engine.now)
        except InstanceDown:
            flow.settle(Outcome.CRASHED, "platform down")
            return
        if result == "rejected":
            flow.settle(Outcome.REJECTED)

    def _flatten(self, entry: EndpointSpec) -> list:
        """Preorder walk of the call tree into sequential compute/db ops."""
        ops: list = []

        def walk(ep: EndpointSpec) -> None:
            ops.append(("compute", ep.service, ep.service_time, ep.ledger_action))
            if ep.db is not None:
                for _ in range(ep.db.queries):
                    ops.append(("db", ep))
            if ep.saga is not None:
                for step in self.sagas[ep.saga].steps:
                    walk(self.endpoints[step.forward])
            for call in ep.downstream:
                walk(self.endpoints[call.endpoint])

        walk(entry)
        return ops

    def schedule_mono_background_jobs(self, job: MonoJob) -> None:
        """Async notification tail of a monolith booking."""
        if job.saga_id is None:
            return
        entry = self.endpoints[job.flow.route.entry_endpoint] if job.flow else None
        if entry is None or entry.saga is None:
            return
        tail = self.sagas[entry.saga].async_tail
        if tail is None:
            return
        ep = self.endpoints[tail]
        bg = MonoJob(self, None, [("compute", ep.service, ep.service_time, None)],
                     None, background=True)
        if self.monolith.state is InstanceState.UP:
            self.monolith.admit(bg, self.engine.now)

    # ------------------------------------------------------------------
    # heartbeats / registry

    def _on_heartbeat_tick(self, instance_id: str) -> None:
        inst = self.instances[instance_id]
        if inst.state is InstanceState.DOWN:
            return  # chain ends
        now = self.engine.now
        if not self.fault_state.is_partitioned(inst.kind):
            if self.registry.is_registered(instance_id):
                beats = self.registry.heartbeat(instance_id, now)
            else:
                self.registry.register(instance_id, inst.kind, inst.index, now)
                self.lb_for(inst.kind).note_membership(instance_id, True)
                beats = 0
                if inst.kind == cat.NOTIFY:
                    self.kick_deliveries()
            self.engine.schedule_in(self.tuning.hb_interval_us,
                                    ev.HeartbeatDeadline(instance_id, beats))
        self.engine.schedule_in(self.tuning.hb_interval_us,
                                ev.HeartbeatTick(instance_id))

    def _on_heartbeat_deadline(self, instance_id: str, beat_count: int) -> None:
        result = self.registry.note_deadline(instance_id, beat_count, self.engine.now)
        if result == "evicted":
            inst = self.instances[instance_id]
            self.lb_for(inst.kind).note_membership(instance_id, False)
        elif result == "wait":
            self.engine.schedule_in(self.tuning.hb_interval_us,
                                    ev.HeartbeatDeadline(instance_id, beat_count))

    # ------------------------------------------------------------------
    # faults

    def _schedule_faults(self) -> None:
        for fault in self.sc.faults:
            if isinstance(fault, KillInstances):
                self.engine.schedule_at(fault.at_us, ev.FaultInject(fault))
                if self.fault_inject_us is None:
                    self.fault_inject_us = fault.at_us
            elif isinstance(fault, TimedConfigUpdate):
                self.engine.schedule_at(fault.at_us,
                                        ev.ConfigUpdate(fault.key, fault.value))
            else:
                self.engine.schedule_at(fault.start_us, ev.FaultInject(fault))
                self.engine.schedule_at(fault.end_us, ev.FaultClear(fault))

    def _on_fault_inject(self, fault) -> None:
        now = self.engine.now
        if isinstance(fault, KillInstances):
            self._kill_instances(fault)
        elif isinstance(fault, DbOverload):
            owner = fault.owner if self.monolith is None else MONOLITH
            self.databases[owner].set_capacity(fault.capacity_to, now)
        else:
            self.fault_state.apply(fault)

    def _on_fault_clear(self, fault) -> None:
        now = self.engine.now
        if isinstance(fault, DbOverload):
            owner = fault.owner if self.monolith is None else MONOLITH
            self.databases[owner].set_capacity(self._db_base_capacity[owner], now)
        else:
            self.fault_state.clear(fault)

    def _kill_instances(self, fault: KillInstances) -> None:
        now = self.engine.now
        pool = self.pools.get(fault.kind, ())
        alive = [i for i in pool if i.state in (InstanceState.UP, InstanceState.DRAINING,
                                                InstanceState.STARTING)]
        victims = sorted(alive, key=lambda i: -i.index)[:fault.count]
        for inst in victims:
            self._crash_instance(inst)
            if inst.kind == MONOLITH:
                self.engine.schedule_in(self.sc.monolith_restart_us,
                                        ev.InstanceReady(inst.id))

    def _crash_instance(self, inst: ServiceInstance) -> None:
        now = self.engine.now
        queued = inst.crash(now)
        running = list(self._running.get(inst.id, ()))
        if inst.kind == MONOLITH:
            running = list(self._running.get(MONOLITH, ()))
        for job in running:
            job.on_crashed(now)
        for job in queued:
            job.on_crashed(now)
        self._record_instance_count(inst.kind)

    def _on_instance_ready(self, instance_id: str) -> None:
        inst = self.instances[instance_id]
        if inst.kind == MONOLITH:
            inst.mark_up(self.engine.now)
            self._record_instance_count(MONOLITH)
            return
        if inst.state is not InstanceState.STARTING:
            return
        inst.mark_up(self.engine.now)
        self._register_instance(inst)
        self._record_instance_count(inst.kind)

    # ------------------------------------------------------------------
    # config

    def _on_config_update(self, key: str, value) -> None:
        self.cfg.set(key, value)
        self.tuning = Tuning(self.cfg)
        for breaker in self.breakers.values():
            if breaker.params != self.tuning.breaker_params:
                old = list(breaker.window)
                breaker.params = self.tuning.breaker_params
                breaker.window = deque(old, maxlen=self.tuning.breaker_params.window)
        if key.startswith("lb."):
            self.lbs.clear()  # rebuilt lazily with ring re-membership
            for kind, pool in self.pools.items():
                lb = self.lb_for(kind)
                for inst in pool:
                    if self.registry.is_registered(inst.id):
                        lb.note_membership(inst.id, True)

    # ------------------------------------------------------------------
    # periodic ticks: metrics, degradation, autoscaling

    def _schedule_ticks(self) -> None:
        self.engine.schedule_at(self.tuning.tick_us, ev.MetricsTick(1))
        self.engine.schedule_at(self.tuning.tick_us, ev.DegradeEvaluate(1))

    def _on_metrics_tick(self, index: int) -> None:
        now = self.engine.now
        for kind in sorted(self.pools):
            pool = self.pools[kind]
            busy_cum = 0
            instances = 0
            capacity = 0
            queue_len = 0
            inflight = 0
            for inst in pool:
                inst.accrue(now)
                busy_cum += inst.busy_time
                if inst.state is not InstanceState.DOWN:
                    instances += 1
                    capacity += inst.capacity
                    queue_len += len(inst.queue)
                    inflight += inst.inflight
            prev = self._busy_prev.get(kind, 0)
            self._busy_prev[kind] = busy_cum
            self.samples.append(TickSample(now, kind, instances, capacity,
                                           busy_cum - prev, queue_len, inflight))
            self._kind_busy_hist.setdefault(kind, []).append(
                (now, busy_cum, capacity))
        if (self.monolith is None and self.tuning.autoscale_enabled):
            for kind in sorted(self.pools):
                self.engine.schedule_at(now, ev.ScaleEvaluate(kind))
        self.kick_deliveries()
        if now + self.tuning.tick_us <= self.duration_us:
            self.engine.schedule_in(self.tuning.tick_us, ev.MetricsTick(index + 1))

    def _window_util_pct(self, kind: str, window_us: SimTime) -> float | None:
        hist = self._kind_busy_hist.get(kind)
        if not hist:
            return None
        now_t, now_busy, now_cap = hist[-1]
        target = now_t - window_us
        base = None
        for t, busy, _cap in reversed(hist):
            base = (t, busy)
            if t <= target:
                break
        t0, busy0 = base
        if now_t <= t0:
            return None
        # capacity integral over the lookback, from the alive intervals
        cap_integral = 0
        for inst in self.pools[kind]:
            if inst.up_at is None:
                continue  # still starting
            start = max(inst.up_at, t0)
            end = now_t if inst.down_at is None else min(inst.down_at, now_t)
            if end > start:
                cap_integral += inst.capacity * (end - start)
        if cap_integral <= 0:
            return None
        return 100.0 * (now_busy - busy0) / cap_integral

    def _on_scale_evaluate(self, kind: str) -> None:
        if not self.tuning.autoscale_enabled or self.monolith is not None:
            return
        policy = self.tuning.autoscale
        util = self._window_util_pct(kind, policy.window_us)
        if util is None:
            return
        current = sum(1 for i in self.pools[kind]
                      if i.state is not InstanceState.DOWN)
        decision = evaluate_scaling(policy, util, current,
                                    self._scale_last.get(kind), self.engine.now)
        if decision.action == "out":
            self._scale_last[kind] = self.engine.now
            self._spawn_instance(kind, starting=True)
            self.scale_log.append((self.engine.now, kind, "out", current + 1))
        elif decision.action == "in":
            ups = [i for i in self.pools[kind] if i.state is InstanceState.UP]
            if len(ups) <= policy.min_instances:
                return
            self._scale_last[kind] = self.engine.now
            victim = max(ups, key=lambda i: i.index)
            self.registry.deregister(victim.id)
            self.lb_for(kind).note_membership(victim.id, False)
            victim.start_drain(self.engine.now, self._on_drained)
            self.scale_log.append((self.engine.now, kind, "in", current - 1))

    def _on_drained(self, inst: ServiceInstance) -> None:
        self._record_instance_count(inst.kind)

    def _on_degrade_evaluate(self, index: int) -> None:
        now = self.engine.now
        if self.tuning.degrade_enabled and self.monolith is None:
            horizon = now - self.tuning.degrade_window_us
            self._recent_roots = [(t, lat) for (t, lat) in self._recent_roots
                                  if t >= horizon]
            lats = sorted(lat for (_t, lat) in self._recent_roots)
            p95_ms = None
            if lats:
                from tripsim.telemetry import nearest_rank
                p95_ms = nearest_rank(lats, 95) / 1000.0
            util = self._window_util_pct(cat.GATEWAY, self.tuning.degrade_window_us)
            self.shed_set = degrade_shed_set(
                p95_ms, util, self.tuning.degrade_ceiling_ms,
                self.tuning.degrade_watermark, self.routes.non_critical_classes())
        else:
            self.shed_set = set()
        if now + self.tuning.tick_us <= self.duration_us:
            self.engine.schedule_in(self.tuning.tick_us, ev.DegradeEvaluate(index + 1))

    def _on_breaker_probe_window(self, key, open_seq: int) -> None:
        breaker = self.breakers.get(tuple(key))
        if breaker is not None:
            breaker.on_probe_window(open_seq, self.engine.now)

    # ------------------------------------------------------------------
    # message queue delivery

    def kick_deliveries(self) -> None:
        if self.monolith is not None:
            return
        while self.mq.pending_count() > 0:
            try:
                candidates = self.candidates(cat.NOTIFY)
            except NoHealthyInstance:
                return
            target = None
            for inst in candidates:
                if inst.inflight < inst.capacity:
                    target = inst
                    break
            if target is None:
                return
            msg = self.mq.take()
            job = DeliveryJob(self, msg, target)
            result = target.admit(job, self.engine.now)
            if result == "rejected":
                self.mq.nack(msg.id)
                return

    # ------------------------------------------------------------------
    # run

    def run(self) -> RunRecord:
        if self.workload is not None:
            self.workload.start()
        self.engine.run(until=self.duration_us)
        return self._finalize()

    def _finalize(self) -> RunRecord:
        now = self.engine.now
        self.counters.inflight_at_end = len(self._live_flows)
        if not self.counters.balanced():
            raise ev.InvariantViolation(
                f"conservation violated: {self.counters}")
        ledger_violations = sum(
            1 for saga in self.saga_instances
            if saga.terminal and not audit_saga(saga, self.ledger))
        saga_stats = {
            "total": len(self.saga_instances),
            "completed": sum(1 for s in self.saga_instances
                             if s.state is SagaState.COMPLETED),
            "compensated": sum(1 for s in self.saga_instances
                               if s.state is SagaState.COMPENSATED),
            "stuck": self.sagas_stuck,
            "running_at_end": sum(1 for s in self.saga_instances if not s.terminal),
            "ledger_violations": ledger_violations,
            "messages_delivered": len(self.mq.delivered),
            "messages_outstanding": self.mq.outstanding(),
        }
        if ledger_violations:
            raise ev.InvariantViolation(
                f"{ledger_violations} terminal sagas with inconsistent ledger")
        max_queue = {}
        for kind, pool in self.pools.items():
            max_queue[kind] = max((i.max_queue_len for i in pool), default=0)
        for owner, db in self.databases.items():
            max_queue[f"db.{owner}"] = db.max_queue_len
        users = None
        if self.sc.workload is not None and hasattr(self.sc.workload, "users"):
            users = self.sc.workload.users
        return RunRecord(
            scenario_id=self.sc.id,
            family=self.sc.family,
            seed=self.sc.seed,
            mode=self.sc.mode,
            duration_us=self.duration_us,
            warmup_us=self.sc.warmup_us,
            tick_us=self.tuning.tick_us,
            spans=self.trace.spans,
            counters=self.counters,
            samples=self.samples,
            instance_timeline=self.instance_timeline,
            entry_delay_us=self.tuning.entry_delay_us,
            concurrent_users=users,
            fault_inject_us=self.fault_inject_us,
            saga_stats=saga_stats,
            max_queue_by_kind=max_queue,
            mem_footprint_units=self.tuning.mem_footprint,
            mem_per_inflight_units=self.tuning.mem_per_inflight,
            mem_node_units=self.tuning.mem_node,
        )
