"""Shared helpers: compact scenario builders and run shortcuts."""

from __future__ import annotations

import pytest

from tripsim import catalog as cat
from tripsim.runtime import Simulation
from tripsim.scenario import Scenario
from tripsim.telemetry import aggregate
from tripsim.workloads import ClosedLoop, OpenLoop, PeriodicUpdate


def make_scenario(sid="test", **kwargs) -> Scenario:
    kwargs.setdefault("duration_us", 10_000_000)
    kwargs.setdefault("warmup_us", 1_000_000)
    kwargs.setdefault("seed", 7)
    return Scenario(id=sid, **kwargs)


def run_record(scenario: Scenario):
    return Simulation(scenario).run()


def run_report(scenario: Scenario):
    return aggregate(run_record(scenario))


def steady_status_scenario(**kwargs) -> Scenario:
    """Light deterministic workload: one status update every 100ms."""
    kwargs.setdefault("workload", PeriodicUpdate(sources=1, period_us=100_000,
                                                 cls="status_update"))
    return make_scenario(**kwargs)


@pytest.fixture
def small_mix_scenario():
    return make_scenario(
        workload=ClosedLoop(users=20, think_us=1_000_000, mix=dict(cat.DEFAULT_MIX)),
        duration_us=20_000_000, warmup_us=2_000_000)
