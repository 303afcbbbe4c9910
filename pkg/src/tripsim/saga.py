"""Booking saga: ordered forward steps with reverse-order compensation.

SagaInstance is the orchestration state machine, kept free of any event
plumbing so the transition rules are directly testable: feed it forward
and compensation results, get back the next action. The runtime performs
the actual service calls.

Compensation covers every completed step in reverse order. A step that
failed with an *ambiguous* outcome (timeout: the callee may have done the
work and the response was lost) is additionally compensated first; the
reservation ledger records a tombstone on release, so a late-arriving
reserve cannot resurrect a cancelled booking. Definitive failures
(declined payment, rejected or crashed before completion) need no such
defensive cancel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


@dataclass(frozen=True)
class SagaStep:
    name: str
    forward: str  # endpoint ref
    compensation: str | None


@dataclass(frozen=True)
class SagaDefinition:
    name: str
    steps: tuple[SagaStep, ...]
    async_tail: str | None = None  # fire-and-forget endpoint on completion

    def compensable_steps(self) -> list[SagaStep]:
        return [s for s in self.steps if s.compensation is not None]


class SagaState(enum.Enum):
    RUNNING = "running"
    COMPENSATING = "compensating"
    COMPLETED = "completed"
    COMPENSATED = "compensated"
    STUCK = "stuck"


@dataclass
class SagaAction:
    """What the runtime should do next: kind is "forward", "compensate",
    "completed", "compensated", or "stuck"."""

    kind: str
    step: SagaStep | None = None


class SagaInstance:
    """One saga execution; terminal states are COMPLETED / COMPENSATED
    (STUCK only when a compensation exhausts its retry budget)."""

    def __init__(self, definition: SagaDefinition, saga_id: int, trace_id: int,
                 compensation_budget: int = 5):
        self.definition = definition
        self.id = saga_id
        self.trace_id = trace_id
        self.state = SagaState.RUNNING
        self.completed_steps: list[SagaStep] = []
        self.compensation_log: list[SagaStep] = []
        self.failure: str | None = None
        self._step_idx = 0
        self._comp_queue: list[SagaStep] = []
        self._comp_attempts = 0
        self._comp_budget = compensation_budget

    # -- forward phase

    def start(self) -> SagaAction:
        return SagaAction("forward", self.definition.steps[0])

    def forward_succeeded(self) -> SagaAction:
        assert self.state is SagaState.RUNNING
        self.completed_steps.append(self.definition.steps[self._step_idx])
        self._step_idx += 1
        if self._step_idx >= len(self.definition.steps):
            self.state = SagaState.COMPLETED
            return SagaAction("completed")
        return SagaAction("forward", self.definition.steps[self._step_idx])

    def forward_failed(self, outcome: str, ambiguous: bool) -> SagaAction:
        """Terminal step failure: build the compensation plan.

        ``ambiguous`` marks lost-response failures whose side effect may
        have landed; the failed step's compensation then runs as well.
        """
        assert self.state is SagaState.RUNNING
        self.failure = outcome
        queue: list[SagaStep] = []
        failed_step = self.definition.steps[self._step_idx]
        if ambiguous and failed_step.compensation is not None:
            queue.append(failed_step)
        queue.extend(s for s in reversed(self.completed_steps)
                     if s.compensation is not None)
        self._comp_queue = queue
        if not queue:
            self.state = SagaState.COMPENSATED
            return SagaAction("compensated")
        self.state = SagaState.COMPENSATING
        self._comp_attempts = 0
        return SagaAction("compensate", queue[0])

    # -- compensation phase

    def compensation_succeeded(self) -> SagaAction:
        assert self.state is SagaState.COMPENSATING
        self.compensation_log.append(self._comp_queue.pop(0))
        if not self._comp_queue:
            self.state = SagaState.COMPENSATED
            return SagaAction("compensated")
        self._comp_attempts = 0
        return SagaAction("compensate", self._comp_queue[0])

    def compensation_failed(self) -> SagaAction:
        """One compensation attempt failed; retry within budget else STUCK."""
        assert self.state is SagaState.COMPENSATING
        self._comp_attempts += 1
        if self._comp_attempts >= self._comp_budget:
            self.state = SagaState.STUCK
            return SagaAction("stuck")
        return SagaAction("compensate", self._comp_queue[0])

    @property
    def terminal(self) -> bool:
        return self.state in (SagaState.COMPLETED, SagaState.COMPENSATED,
                              SagaState.STUCK)


class ReservationLedger:
    """Per-service reservation/charge counters keyed by saga id.

    release() leaves a tombstone so that a reserve arriving after its own
    cancel (late side effect of a timed-out call) is discarded; the
    all-or-nothing audit then holds for every terminal saga.
    """

    RESERVED = "reserved"
    CANCELLED = "cancelled"

    def __init__(self):
        self._entries: dict[tuple[str, int], str] = {}

    def reserve(self, counter: str, saga_id: int) -> bool:
        key = (counter, saga_id)
        if self._entries.get(key) == self.CANCELLED:
            return False
        self._entries[key] = self.RESERVED
        return True

    def release(self, counter: str, saga_id: int) -> None:
        self._entries[(counter, saga_id)] = self.CANCELLED

    def active(self, saga_id: int) -> list[str]:
        return sorted(c for (c, s), v in self._entries.items()
                      if s == saga_id and v == self.RESERVED)

    def active_totals(self) -> dict[str, int]:
        totals: dict[str, int] = {}
        for (counter, _), v in self._entries.items():
            if v == self.RESERVED:
                totals[counter] = totals.get(counter, 0) + 1
        return totals


def audit_saga(instance: SagaInstance, ledger: ReservationLedger) -> bool:
    """All-or-nothing check for one terminal saga.

    COMPLETED must hold exactly the counters of its compensable steps;
    COMPENSATED must hold none. STUCK sagas fail the audit by definition.
    """
    held = ledger.active(instance.id)
    if instance.state is SagaState.COMPLETED:
        expected = sorted({s.name for s in instance.definition.compensable_steps()})
        return held == expected
    if instance.state is SagaState.COMPENSATED:
        return held == []
    return False
