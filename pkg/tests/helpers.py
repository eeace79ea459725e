"""Shared builders for the test suite: compact world/instance construction,
seeded random generators for solver instances and event sequences, and a
local stub for the external routing provider."""
from __future__ import annotations

import contextlib
import json
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from corec.domain import (
    DEFAULT_PRIORITY_WEIGHTS,
    GeoPoint,
    Priority,
    RescuePoint,
    Role,
    Shelter,
    TransportMode,
    Vehicle,
    VolunteerUnit,
    WorldState,
    Availability,
    Qualification,
)
from corec.recommend import AssignmentInstance
from corec.store import Author, EventKind, EventLog
from corec.travel import TimeMatrix

DM = Author(id="dm-1", role=Role.DECISION_MAKER)
AFF = Author(id="aff-1", role=Role.AFFECTED)
SYS = Author(id="system", role=Role.SYSTEM)


def make_unit(
    uid: str,
    capacity: int = 5,
    capable: bool = False,
    mode: TransportMode = TransportMode.ROAD,
    lat: float = 49.40,
    lon: float = 2.82,
    qualification: Qualification = Qualification.APPROVED,
    availability: Availability = Availability.AVAILABLE,
) -> VolunteerUnit:
    return VolunteerUnit(
        id=uid,
        driver_name=f"driver {uid}",
        location=GeoPoint(lat, lon),
        vehicle=Vehicle(id=f"v-{uid}", mode=mode, capacity=capacity, special_needs_capable=capable),
        qualification=qualification,
        availability=availability,
    )


def make_point(
    pid: str,
    demand: int = 5,
    special: int = 0,
    priority: Priority = Priority.MEDIUM,
    modes: tuple[TransportMode, ...] = (TransportMode.ROAD,),
    lat: float = 49.42,
    lon: float = 2.83,
) -> RescuePoint:
    return RescuePoint(
        id=pid,
        location=GeoPoint(lat, lon),
        demand=demand,
        special_needs=special,
        priority=priority,
        accessible_modes=frozenset(modes),
    )


def make_shelter(sid: str = "s-1", capacity: int = 100) -> Shelter:
    return Shelter(id=sid, location=GeoPoint(49.41, 2.82), capacity=capacity)


def instance_of(
    units: list[VolunteerUnit],
    points: list[RescuePoint],
    cells: dict[tuple[str, str], int | None],
    weights: dict[Priority, int] | None = None,
) -> AssignmentInstance:
    """Instance with an explicit travel matrix; every pair must be given."""
    matrix = TimeMatrix(
        unit_ids=tuple(u.id for u in units),
        point_ids=tuple(p.id for p in points),
        cells={(u.id, p.id): cells[(u.id, p.id)] for u in units for p in points},
    )
    return AssignmentInstance(
        points=tuple(points),
        units=tuple(units),
        matrix=matrix,
        weights=dict(weights or DEFAULT_PRIORITY_WEIGHTS),
    )


def random_instance(rng: random.Random, max_units: int = 8, max_points: int = 4):
    """Seeded random solver instance plus the parallel arrays the exhaustive
    oracle consumes. Returns (instance, unit_ids, seats, point_ids, demands,
    weights, cells)."""
    n = rng.randint(1, max_units)
    m = rng.randint(1, max_points)
    units = [
        make_unit(f"u-{i + 1}", capacity=rng.randint(2, 9), capable=rng.random() < 0.3)
        for i in range(n)
    ]
    priorities = [rng.choice(list(Priority)) for _ in range(m)]
    points = [
        make_point(
            f"p-{j + 1}",
            demand=rng.randint(1, 12),
            special=0,
            priority=priorities[j],
        )
        for j in range(m)
    ]
    cells: dict[tuple[str, str], int | None] = {}
    grid: list[list[int | None]] = []
    for u in units:
        row: list[int | None] = []
        for p in points:
            value = rng.randint(60, 3600) if rng.random() < 0.8 else None
            cells[(u.id, p.id)] = value
            row.append(value)
        grid.append(row)
    instance = instance_of(units, points, cells)
    seats = [u.vehicle.capacity - 1 for u in units]
    weights = [DEFAULT_PRIORITY_WEIGHTS[p.priority] for p in points]
    demands = [p.demand for p in points]
    return (
        instance,
        [u.id for u in units],
        seats,
        [p.id for p in points],
        demands,
        weights,
        grid,
    )


def random_event_log(rng: random.Random, path=None) -> tuple[WorldState, EventLog]:
    """Seeded random but schema-valid event sequence over a small world.

    Payloads always pass append-time validation; a share of them violate
    world-level invariants on purpose (unknown ids, double decisions,
    re-dispatches) so replay's skip-and-audit path is exercised.
    """
    m = rng.randint(1, 3)
    initial = WorldState(
        rescue_points=tuple(
            make_point(f"p-{j + 1}", demand=rng.randint(0, 10), priority=rng.choice(list(Priority)))
            for j in range(m)
        ),
        shelters=(make_shelter(),),
    )
    log = EventLog(path)
    point_ids = [p.id for p in initial.rescue_points]
    registered: list[str] = []
    approved: list[str] = []
    closures: list[str] = []
    at = 0
    uid_counter = 0
    cid_counter = 0

    for _ in range(rng.randint(10, 40)):
        at += rng.randint(0, 50)
        roll = rng.random()
        if roll < 0.18:
            uid_counter += 1
            uid = f"u-{uid_counter}"
            if registered and rng.random() < 0.15:
                uid = rng.choice(registered)  # duplicate: replay rejects
            log.append(at, SYS, EventKind.DRIVER_REGISTERED, {
                "participant_id": uid,
                "driver_name": f"driver {uid}",
                "contact": f"{uid}@example.org",
                "location": {"lat": 49.4 + rng.uniform(-0.1, 0.1), "lon": 2.8 + rng.uniform(-0.1, 0.1)},
                "vehicle": {"id": f"v-{uid}", "mode": "road", "capacity": rng.randint(2, 9),
                            "special_needs_capable": rng.random() < 0.3},
            })
            if uid not in registered:
                registered.append(uid)
        elif roll < 0.32:
            target = rng.choice(registered) if registered and rng.random() < 0.8 else "u-none"
            verdict = rng.choice(["approved", "rejected"])
            log.append(at, DM, EventKind.REGISTRATION_VETTED,
                       {"registration_id": target, "verdict": verdict})
            if verdict == "approved" and target in registered and target not in approved:
                approved.append(target)
        elif roll < 0.48:
            pid = rng.choice(point_ids) if rng.random() < 0.85 else "p-none"
            demand = rng.randint(0, 15)
            log.append(at, AFF, EventKind.POINT_REPORTED, {
                "point_id": pid,
                "claim": {"type": "demand_update", "demand": demand,
                          "special_needs": rng.randint(0, demand) if demand else 0},
            })
        elif roll < 0.56:
            cid_counter += 1
            cid = f"c-{cid_counter}"
            if closures and rng.random() < 0.2:
                cid = rng.choice(closures)
            log.append(at, DM, EventKind.ROAD_CLOSED, {"closure": {
                "id": cid,
                "a": {"lat": 49.4, "lon": 2.8}, "a_radius_km": rng.uniform(0.1, 2.0),
                "b": {"lat": 49.42, "lon": 2.84}, "b_radius_km": rng.uniform(0.1, 2.0),
                "mode": "road",
            }})
            if cid not in closures:
                closures.append(cid)
        elif roll < 0.62:
            cid = rng.choice(closures) if closures and rng.random() < 0.7 else "c-none"
            log.append(at, DM, EventKind.ROAD_REOPENED, {"closure_id": cid})
            if cid in closures:
                closures.remove(cid)
        elif roll < 0.72:
            uid = rng.choice(registered) if registered and rng.random() < 0.8 else "u-none"
            log.append(at, DM, EventKind.UNIT_STATUS_CHANGED, {
                "unit_id": uid,
                "availability": rng.choice(["available", "unavailable", "dispatched"]),
            })
        elif roll < 0.84 and registered:
            chosen = rng.sample(registered, k=min(len(registered), rng.randint(1, 3)))
            log.append(at, DM, EventKind.PLAN_DISPATCHED, {
                "plan_id": f"plan-{rng.randint(1, 5)}",
                "assignments": [
                    {"unit_id": uid, "point_id": rng.choice(point_ids),
                     "travel_time_s": rng.randint(60, 900)}
                    for uid in chosen
                ],
            })
        elif roll < 0.92:
            log.append(at, DM, EventKind.POINT_CLEARED, {"point_id": rng.choice(point_ids)})
        elif roll < 0.97:
            log.append(at, AFF, EventKind.FEEDBACK_SUBMITTED,
                       {"rating": rng.randint(1, 5), "text": "ok"})
        else:
            log.append(at, DM, EventKind.BULLETIN_PUBLISHED, {"text": f"update at {at}"})
    return initial, log


# ---------------------------------------------------------------------------
# External routing provider stub


class StubRoutingState:
    """Mutable knobs for the stub: response behavior, payload, and latency."""

    def __init__(self):
        self.behavior = "ok"  # ok | error | malformed
        self.duration = 123.5
        self.delay_s = 0.0
        self.requests = 0


class _StubRoutingHandler(BaseHTTPRequestHandler):
    state: StubRoutingState  # injected per server instance

    def do_GET(self):
        st = self.state
        st.requests += 1
        if st.delay_s:
            time.sleep(st.delay_s)
        if st.behavior == "error":
            self.send_response(500)
            self.end_headers()
            return
        if st.behavior == "malformed":
            body = b'{"routes": []}'
        else:
            body = json.dumps({"routes": [{"duration": st.duration}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@contextlib.contextmanager
def routing_stub():
    """Local HTTP server mimicking the external routing provider; yields
    (state, base_url)."""
    state = StubRoutingState()
    handler = type("Handler", (_StubRoutingHandler,), {"state": state})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield state, f"http://127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()
