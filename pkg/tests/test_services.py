"""Platform mechanics: slot admission, queueing, crash, drain, accounting."""

import pytest

from tripsim.services import (DatabaseModel, InstanceDown, InstanceState,
                              ServiceInstance)


class StubJob:
    def __init__(self):
        self.slot_at = None
        self.crashed_at = None

    def on_slot(self, now):
        self.slot_at = now

    def on_crashed(self, now):
        self.crashed_at = now


def make_instance(capacity=1, queue_bound=16, now=0):
    return ServiceInstance("FlightBooking", 0, capacity, queue_bound, now)


def test_admit_idle_occupies_slot_immediately():
    inst = make_instance()
    job = StubJob()
    assert inst.admit(job, 100) == "accepted"
    assert job.slot_at == 100
    assert inst.inflight == 1


def test_admit_busy_queues_fifo_and_starts_on_release():
    inst = make_instance(capacity=1)
    first, second, third = StubJob(), StubJob(), StubJob()
    assert inst.admit(first, 0) == "accepted"
    assert inst.admit(second, 0) == "queued"
    assert inst.admit(third, 0) == "queued"
    inst.complete(10_000)  # first finishes; second starts at the same time
    assert second.slot_at == 10_000
    assert third.slot_at is None
    inst.complete(20_000)
    assert third.slot_at == 20_000  # FIFO order preserved


def test_zero_queue_bound_rejects():
    inst = make_instance(capacity=1, queue_bound=0)
    assert inst.admit(StubJob(), 0) == "accepted"
    assert inst.admit(StubJob(), 0) == "rejected"


def test_admit_down_instance_raises():
    inst = make_instance()
    inst.crash(0)
    with pytest.raises(InstanceDown):
        inst.admit(StubJob(), 1)


def test_crash_returns_queued_jobs_and_zeroes_slots():
    inst = make_instance(capacity=3, queue_bound=8)
    jobs = [StubJob() for _ in range(5)]
    for job in jobs:
        inst.admit(job, 0)
    assert inst.inflight == 3 and len(inst.queue) == 2
    victims = inst.crash(50)
    assert victims == jobs[3:]
    assert inst.inflight == 0 and not inst.queue
    assert inst.state is InstanceState.DOWN
    # crash of a down instance is a no-op
    assert inst.crash(60) == []


def test_work_conservation_property():
    # no slot idle while the queue is non-empty, across random ops
    import random
    rng = random.Random(3)
    inst = make_instance(capacity=3, queue_bound=10)
    now = 0
    for _ in range(2_000):
        now += rng.randrange(1, 5)
        if rng.random() < 0.6:
            inst.admit(StubJob(), now)
        elif inst.inflight > 0:
            inst.complete(now)
        assert inst.inflight <= inst.capacity
        assert len(inst.queue) <= inst.queue_bound
        if inst.queue:
            assert inst.inflight == inst.capacity


def test_busy_time_accrual_and_utilization_arithmetic():
    inst = make_instance(capacity=2)
    inst.admit(StubJob(), 0)
    inst.accrue(1_000_000)
    # one of two slots busy for the full window -> 50%
    window = 1_000_000
    assert 100.0 * inst.busy_time / (inst.capacity * window) == 50.0
    inst.complete(1_000_000)
    inst.accrue(2_000_000)
    assert inst.busy_time == 1_000_000  # idle second half adds nothing
    assert inst.busy_time <= inst.capacity * 2_000_000


def test_utilization_full_saturation_caps_at_100():
    inst = make_instance(capacity=1)
    inst.admit(StubJob(), 0)
    inst.accrue(500_000)
    assert 100.0 * inst.busy_time / (inst.capacity * 500_000) == 100.0


def test_drain_completes_accepted_work_before_leaving():
    inst = make_instance(capacity=1, queue_bound=4)
    drained = []
    inst.admit(StubJob(), 0)
    inst.admit(StubJob(), 0)  # queued
    inst.start_drain(10, drained.append)
    assert inst.state is InstanceState.DRAINING
    assert inst.admit(StubJob(), 11) == "rejected"  # accepts nothing new
    inst.complete(20)  # first done, queued job starts
    assert not drained
    inst.complete(30)
    assert drained == [inst]
    assert inst.state is InstanceState.DOWN


def test_drain_idle_instance_leaves_immediately():
    inst = make_instance()
    drained = []
    inst.start_drain(5, drained.append)
    assert drained == [inst]


def test_database_fifo_and_capacity_resize():
    db = DatabaseModel("FlightBooking", 2)
    jobs = [StubJob() for _ in range(4)]
    for job in jobs:
        db.admit(job, 0)
    assert [j.slot_at for j in jobs] == [0, 0, None, None]
    db.complete(5_000)
    assert jobs[2].slot_at == 5_000
    db.set_capacity(4, 6_000)  # freed capacity drains the queue
    assert jobs[3].slot_at == 6_000
