"""Default travel-platform catalog: endpoint graph, routes, booking saga.

The four request classes and their call trees:

    search_trip   -> gateway -> Search -+-> FlightBooking.search_fares (parallel)
                                        +-> HotelBooking.search_rooms  (parallel)
    book_trip     -> gateway saga: reserve flight -> reserve hotel ->
                     charge payment -> async notification
    view_profile  -> gateway -> UserManagement.get_profile
    status_update -> gateway -> NotificationService.push_status

Per-call times are deterministic by default and sized so that an unloaded
microservices deployment answers a mixed workload in the mid-60s of
milliseconds and the monolith baseline (same call tree, sequential and
in-process) in the high 80s. Booking endpoints carry reservation-ledger
side effects keyed by saga step name.

ConfigurationManagement, LoadBalancer, and Database appear in the
component inventory but are not instance pools: configuration is the
control-plane store, balancing is a gateway policy, and databases are
modeled per owning service.
"""

from __future__ import annotations

from tripsim.engine import Deterministic, Distribution, Exponential, Uniform, ms
from tripsim.saga import SagaDefinition, SagaStep
from tripsim.services import DbProfile, DownstreamCall, EndpointSpec, ServiceKind
from tripsim.traffic import RouteEntry, RouteTable

GATEWAY = ServiceKind.API_GATEWAY.value
SEARCH = ServiceKind.SEARCH_RECOMMENDATIONS.value
FLIGHT = ServiceKind.FLIGHT_BOOKING.value
HOTEL = ServiceKind.HOTEL_BOOKING.value
PAYMENT = ServiceKind.PAYMENT_GATEWAY.value
USER = ServiceKind.USER_MANAGEMENT.value
NOTIFY = ServiceKind.NOTIFICATION_SERVICE.value

# Kinds that run as instance pools in the microservices deployment.
SERVING_KINDS = [GATEWAY, SEARCH, FLIGHT, HOTEL, PAYMENT, USER, NOTIFY]

# Kinds that own a dedicated database.
DB_OWNERS = [FLIGHT, HOTEL, PAYMENT, USER]

REQUEST_CLASSES = ["search_trip", "book_trip", "view_profile", "status_update"]

DEFAULT_MIX = {
    "search_trip": 0.60,
    "book_trip": 0.20,
    "view_profile": 0.15,
    "status_update": 0.05,
}

_DB_5MS = DbProfile(queries=1, query_time=Deterministic(ms(5)))


def _default_endpoints() -> list[EndpointSpec]:
    return [
        # Gateway entry endpoints, one per request class. The gateway holds
        # a slot for the whole request, so orchestration load is visible.
        EndpointSpec(GATEWAY, "search_trip", Deterministic(ms(1)),
                     request_bytes=600, response_bytes=8192,
                     downstream=[DownstreamCall(f"{SEARCH}.search")]),
        EndpointSpec(GATEWAY, "book_trip", Deterministic(ms(1)),
                     request_bytes=1400, response_bytes=2048,
                     saga="booking"),
        EndpointSpec(GATEWAY, "view_profile", Deterministic(ms(1)),
                     request_bytes=400, response_bytes=4096,
                     downstream=[DownstreamCall(f"{USER}.get_profile")]),
        EndpointSpec(GATEWAY, "status_update", Deterministic(ms(1)),
                     request_bytes=256, response_bytes=128,
                     downstream=[DownstreamCall(f"{NOTIFY}.push_status")]),
        # Search fans out to both booking inventories in parallel.
        EndpointSpec(SEARCH, "search", Deterministic(ms(12)),
                     downstream=[
                         DownstreamCall(f"{FLIGHT}.search_fares", parallel=True),
                         DownstreamCall(f"{HOTEL}.search_rooms", parallel=True),
                     ]),
        EndpointSpec(FLIGHT, "search_fares", Deterministic(ms(15)), db=_DB_5MS),
        EndpointSpec(HOTEL, "search_rooms", Deterministic(ms(15)), db=_DB_5MS),
        EndpointSpec(USER, "get_profile", Deterministic(ms(8)), db=_DB_5MS),
        EndpointSpec(NOTIFY, "push_status", Deterministic(ms(5))),
        EndpointSpec(NOTIFY, "send_booking_note", Deterministic(ms(5))),
        # Booking saga forward/compensation endpoints with ledger effects.
        EndpointSpec(FLIGHT, "reserve_seat", Deterministic(ms(15)), db=_DB_5MS,
                     ledger_action=("reserve", "flight")),
        EndpointSpec(FLIGHT, "cancel_seat", Deterministic(ms(10)), db=_DB_5MS,
                     ledger_action=("release", "flight")),
        EndpointSpec(HOTEL, "reserve_room", Deterministic(ms(15)), db=_DB_5MS,
                     ledger_action=("reserve", "hotel")),
        EndpointSpec(HOTEL, "cancel_room", Deterministic(ms(10)), db=_DB_5MS,
                     ledger_action=("release", "hotel")),
        EndpointSpec(PAYMENT, "charge", Deterministic(ms(20)), db=_DB_5MS,
                     ledger_action=("reserve", "payment")),
        EndpointSpec(PAYMENT, "refund", Deterministic(ms(15)), db=_DB_5MS,
                     ledger_action=("release", "payment")),
    ]


def build_endpoints(overrides: dict[str, dict] | None = None) -> dict[str, EndpointSpec]:
    """Endpoint map keyed by "Kind.name"; scenario files may override
    service_time_ms / db_queries / db_query_time_ms / bytes per endpoint."""
    endpoints = {ep.ref: ep for ep in _default_endpoints()}
    for ref, tweak in (overrides or {}).items():
        ep = endpoints[ref]
        if "service_time_ms" in tweak:
            ep.service_time = Deterministic(ms(tweak["service_time_ms"]))
        if "service_time_exp_ms" in tweak:
            ep.service_time = Exponential(ms(tweak["service_time_exp_ms"]))
        if "service_time_uniform_ms" in tweak:
            lo, hi = tweak["service_time_uniform_ms"]
            ep.service_time = Uniform(ms(lo), ms(hi))
        if "db_queries" in tweak or "db_query_time_ms" in tweak:
            queries = tweak.get("db_queries", ep.db.queries if ep.db else 1)
            qt = tweak.get("db_query_time_ms",
                           (ep.db.query_time.value_us / 1000.0) if ep.db else 5)
            ep.db = DbProfile(queries=queries, query_time=Deterministic(ms(qt)))
        if "request_bytes" in tweak:
            ep.request_bytes = tweak["request_bytes"]
        if "response_bytes" in tweak:
            ep.response_bytes = tweak["response_bytes"]
    _check_acyclic(endpoints)
    return endpoints


def _check_acyclic(endpoints: dict[str, EndpointSpec]) -> None:
    state: dict[str, int] = {}  # 1 = visiting, 2 = done

    def visit(ref: str) -> None:
        mark = state.get(ref)
        if mark == 2:
            return
        if mark == 1:
            raise ValueError(f"endpoint call graph has a cycle through {ref}")
        state[ref] = 1
        for call in endpoints[ref].downstream:
            if call.endpoint not in endpoints:
                raise ValueError(f"{ref} calls unknown endpoint {call.endpoint}")
            visit(call.endpoint)
        state[ref] = 2

    for ref in endpoints:
        visit(ref)


def default_route_table(critical_overrides: dict[str, bool] | None = None) -> RouteTable:
    critical = {"search_trip": False, "book_trip": True,
                "view_profile": False, "status_update": False}
    critical.update(critical_overrides or {})
    entries = {
        cls: RouteEntry(cls, f"{GATEWAY}.{cls}", critical=critical[cls])
        for cls in REQUEST_CLASSES
    }
    return RouteTable(entries)


def booking_saga() -> SagaDefinition:
    return SagaDefinition(
        name="booking",
        steps=(
            SagaStep("flight", f"{FLIGHT}.reserve_seat", f"{FLIGHT}.cancel_seat"),
            SagaStep("hotel", f"{HOTEL}.reserve_room", f"{HOTEL}.cancel_room"),
            SagaStep("payment", f"{PAYMENT}.charge", f"{PAYMENT}.refund"),
        ),
        async_tail=f"{NOTIFY}.send_booking_note",
    )


SAGAS = {"booking": booking_saga()}

# Small default deployment: two copies of every traffic-bearing service,
# one copy of the light ones. The monolith baseline gets the summed
# capacity and a single shared database.
DEFAULT_INSTANCES = {
    GATEWAY: 2, SEARCH: 2, FLIGHT: 2, HOTEL: 2, PAYMENT: 2, USER: 1, NOTIFY: 1,
}
DEFAULT_CAPACITY = 4
DEFAULT_DB_CAPACITY = 6

def scale_distribution(dist: Distribution, multiplier: float) -> Distribution:
    """Uniformly stretch a distribution (heavy-database scenarios)."""
    if multiplier == 1.0:
        return dist
    if isinstance(dist, Deterministic):
        return Deterministic(max(1, int(dist.value_us * multiplier)))
    if isinstance(dist, Exponential):
        return Exponential(max(1, int(dist.mean_us * multiplier)))
    return Uniform(max(1, int(dist.lo_us * multiplier)),
                   max(1, int(dist.hi_us * multiplier)))
