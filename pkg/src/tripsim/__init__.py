"""tripsim: deterministic microservices-vs-monolith platform simulator.

A discrete-event model of an online travel platform: service instances
with bounded queues, a service registry with heartbeat health checks, an
API gateway with pluggable load balancing, circuit breakers, retries,
bulkheads, graceful degradation, a booking saga with compensation, fault
injection, and a metrics pipeline that emits canonical, byte-reproducible
reports for microservices and monolith deployments of the same workload.

The hot event core (heap, random streams, hashing) is compiled when the
optional C extension is available; ``tripsim._backend.BACKEND`` names the
core in use ("ext" or "pure"). Results are identical either way.
"""

from tripsim._backend import BACKEND
from tripsim.engine import (
    MS,
    SECOND,
    US,
    Deterministic,
    Engine,
    Exponential,
    InvalidDistribution,
    RandomStream,
    SchedulingInPast,
    SimError,
    SimTime,
    Uniform,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Engine",
    "RandomStream",
    "SimTime",
    "SimError",
    "SchedulingInPast",
    "InvalidDistribution",
    "Deterministic",
    "Exponential",
    "Uniform",
    "US",
    "MS",
    "SECOND",
    "__version__",
]
