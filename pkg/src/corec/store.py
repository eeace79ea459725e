"""Event-sourced persistence: an append-only context-event log plus
deterministic world-state reconstruction.

The log is newline-delimited JSON, one canonical-form event per line. The
append operation is the only mutation point in the entire system; replay
folds events into a WorldState and never aborts: events whose transition
would break an invariant are skipped and recorded in the audit trail.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

from .domain import (
    Availability,
    PointStatus,
    Priority,
    Qualification,
    Role,
    ValidationError,
    VolunteerUnit,
    WorldState,
    available_seats,
    canonical_dumps,
    parse_closure,
    parse_geopoint,
    parse_vehicle,
    _enum,
    _req,
    _req_int,
    _req_str,
)


class StorageError(OSError):
    """Retriable I/O failure, distinguishable from a validation error."""


class EventKind(str, Enum):
    DRIVER_REGISTERED = "driver_registered"
    REGISTRATION_VETTED = "registration_vetted"
    POINT_REPORTED = "point_reported"
    DEMAND_UPDATED = "demand_updated"
    ROAD_CLOSED = "road_closed"
    ROAD_REOPENED = "road_reopened"
    UNIT_STATUS_CHANGED = "unit_status_changed"
    PLAN_PROPOSED = "plan_proposed"
    PLAN_DISPATCHED = "plan_dispatched"
    POINT_CLEARED = "point_cleared"
    FEEDBACK_SUBMITTED = "feedback_submitted"
    BULLETIN_PUBLISHED = "bulletin_published"


# Who may author which kind. Registrations arrive through the public
# endpoint before the applicant exists, so the platform records them.
AUTHORABLE_KINDS: dict[Role, frozenset[EventKind]] = {
    Role.SYSTEM: frozenset(
        {
            EventKind.DRIVER_REGISTERED,
            EventKind.DEMAND_UPDATED,
            EventKind.ROAD_CLOSED,
            EventKind.ROAD_REOPENED,
            EventKind.UNIT_STATUS_CHANGED,
            EventKind.PLAN_PROPOSED,
            EventKind.BULLETIN_PUBLISHED,
        }
    ),
    Role.DECISION_MAKER: frozenset(
        {
            EventKind.REGISTRATION_VETTED,
            EventKind.POINT_REPORTED,
            EventKind.DEMAND_UPDATED,
            EventKind.ROAD_CLOSED,
            EventKind.ROAD_REOPENED,
            EventKind.UNIT_STATUS_CHANGED,
            EventKind.PLAN_PROPOSED,
            EventKind.PLAN_DISPATCHED,
            EventKind.POINT_CLEARED,
            EventKind.FEEDBACK_SUBMITTED,
            EventKind.BULLETIN_PUBLISHED,
        }
    ),
    Role.DRIVER: frozenset(
        {
            EventKind.POINT_REPORTED,
            EventKind.ROAD_CLOSED,
            EventKind.ROAD_REOPENED,
            EventKind.UNIT_STATUS_CHANGED,
            EventKind.FEEDBACK_SUBMITTED,
        }
    ),
    Role.AFFECTED: frozenset(
        {
            EventKind.POINT_REPORTED,
            EventKind.ROAD_CLOSED,
            EventKind.ROAD_REOPENED,
            EventKind.FEEDBACK_SUBMITTED,
        }
    ),
}

# Kinds whose replay transition can change the world state.
WORLD_MUTATING_KINDS = frozenset(
    {
        EventKind.DRIVER_REGISTERED,
        EventKind.REGISTRATION_VETTED,
        EventKind.POINT_REPORTED,
        EventKind.DEMAND_UPDATED,
        EventKind.ROAD_CLOSED,
        EventKind.ROAD_REOPENED,
        EventKind.UNIT_STATUS_CHANGED,
        EventKind.PLAN_DISPATCHED,
        EventKind.POINT_CLEARED,
    }
)

NEED_NOTE_TAGS = frozenset({"medical", "food", "water", "shelter"})


@dataclass(frozen=True)
class Author:
    id: str
    role: Role


@dataclass(frozen=True)
class ContextEvent:
    seq: int
    at: int
    author: Author
    kind: EventKind
    payload: dict


def event_to_jsonable(ev: ContextEvent) -> dict:
    return {
        "seq": ev.seq,
        "at": ev.at,
        "author": {"id": ev.author.id, "role": ev.author.role.value},
        "kind": ev.kind.value,
        "payload": ev.payload,
    }


def parse_event(obj: Any, ctx: str = "event") -> ContextEvent:
    author_raw = _req(obj, "author", ctx)
    author = Author(
        id=_req_str(author_raw, "id", f"{ctx}.author"),
        role=_enum(Role, _req(author_raw, "role", f"{ctx}.author"), f"{ctx}.author.role"),
    )
    kind = _enum(EventKind, _req(obj, "kind", ctx), f"{ctx}.kind")
    payload = _req(obj, "payload", ctx)
    if not isinstance(payload, dict):
        raise ValidationError(f"{ctx}.payload: expected object")
    return ContextEvent(
        seq=_req_int(obj, "seq", ctx, minimum=1),
        at=_req_int(obj, "at", ctx, minimum=0),
        author=author,
        kind=kind,
        payload=payload,
    )


def canonical_event_line(ev: ContextEvent) -> str:
    return canonical_dumps(event_to_jsonable(ev))


def log_to_bytes(events: tuple[ContextEvent, ...] | list[ContextEvent]) -> bytes:
    return "".join(canonical_event_line(ev) + "\n" for ev in events).encode()


# ---------------------------------------------------------------------------
# Per-kind payload schemas (world-independent checks)


def validate_payload(kind: EventKind, payload: dict) -> None:
    """Raise ValidationError unless the payload matches its kind's schema."""
    ctx = f"payload[{kind.value}]"
    if not isinstance(payload, dict):
        raise ValidationError(f"{ctx}: expected object")
    if kind is EventKind.DRIVER_REGISTERED:
        _req_str(payload, "participant_id", ctx)
        _req_str(payload, "driver_name", ctx)
        _req_str(payload, "contact", ctx)
        parse_geopoint(_req(payload, "location", ctx), f"{ctx}.location")
        parse_vehicle(_req(payload, "vehicle", ctx), f"{ctx}.vehicle")
    elif kind is EventKind.REGISTRATION_VETTED:
        _req_str(payload, "registration_id", ctx)
        verdict = _req_str(payload, "verdict", ctx)
        if verdict not in ("approved", "rejected"):
            raise ValidationError(f"{ctx}: verdict must be 'approved' or 'rejected'")
    elif kind is EventKind.POINT_REPORTED:
        _req_str(payload, "point_id", ctx)
        claim = _req(payload, "claim", ctx)
        claim_type = _req_str(claim, "type", f"{ctx}.claim")
        if claim_type == "demand_update":
            demand = _req_int(claim, "demand", f"{ctx}.claim", minimum=0)
            special = _req_int(claim, "special_needs", f"{ctx}.claim", minimum=0)
            if special > demand:
                raise ValidationError(f"{ctx}.claim: special_needs exceeds demand")
        elif claim_type == "need_note":
            _req_str(claim, "text", f"{ctx}.claim")
            tags = claim.get("tags", [])
            if not isinstance(tags, list) or any(t not in NEED_NOTE_TAGS for t in tags):
                raise ValidationError(f"{ctx}.claim: tags must be from {sorted(NEED_NOTE_TAGS)}")
        else:
            raise ValidationError(f"{ctx}.claim: unknown claim type {claim_type!r}")
    elif kind is EventKind.DEMAND_UPDATED:
        _req_str(payload, "point_id", ctx)
        demand = _req_int(payload, "demand", ctx, minimum=0)
        special = _req_int(payload, "special_needs", ctx, minimum=0)
        if special > demand:
            raise ValidationError(f"{ctx}: special_needs exceeds demand")
        if "priority" in payload:
            _enum(Priority, payload["priority"], f"{ctx}.priority")
    elif kind is EventKind.ROAD_CLOSED:
        parse_closure(_req(payload, "closure", ctx), f"{ctx}.closure")
    elif kind is EventKind.ROAD_REOPENED:
        _req_str(payload, "closure_id", ctx)
    elif kind is EventKind.UNIT_STATUS_CHANGED:
        _req_str(payload, "unit_id", ctx)
        _enum(Availability, _req(payload, "availability", ctx), f"{ctx}.availability")
    elif kind is EventKind.PLAN_PROPOSED:
        plan = _req(payload, "plan", ctx)
        _req_str(plan, "id", f"{ctx}.plan")
        assignments = _req(plan, "assignments", f"{ctx}.plan")
        if not isinstance(assignments, dict):
            raise ValidationError(f"{ctx}.plan.assignments: expected object")
    elif kind is EventKind.PLAN_DISPATCHED:
        _req_str(payload, "plan_id", ctx)
        assignments = _req(payload, "assignments", ctx)
        if not isinstance(assignments, list) or not assignments:
            raise ValidationError(f"{ctx}.assignments: expected non-empty list")
        for i, a in enumerate(assignments):
            actx = f"{ctx}.assignments[{i}]"
            _req_str(a, "unit_id", actx)
            _req_str(a, "point_id", actx)
            _req_int(a, "travel_time_s", actx, minimum=0)
    elif kind is EventKind.POINT_CLEARED:
        _req_str(payload, "point_id", ctx)
    elif kind is EventKind.FEEDBACK_SUBMITTED:
        rating = _req_int(payload, "rating", ctx)
        if not 1 <= rating <= 5:
            raise ValidationError(f"{ctx}: rating must be in 1..5")
        _req(payload, "text", ctx)
    elif kind is EventKind.BULLETIN_PUBLISHED:
        _req_str(payload, "text", ctx)


def validate_event_fields(at: int, author: Author, kind: EventKind, payload: dict) -> None:
    if not isinstance(at, int) or isinstance(at, bool) or at < 0:
        raise ValidationError("event: 'at' must be a non-negative integer")
    if kind not in AUTHORABLE_KINDS.get(author.role, frozenset()):
        raise ValidationError(f"event: role {author.role.value} may not author {kind.value}")
    validate_payload(kind, payload)


# ---------------------------------------------------------------------------
# The append-only log


class EventLog:
    """Ordered context events, optionally persisted as one JSON object per line.

    Single serialized writer; readers may copy .events at any time and see a
    consistent prefix.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._events: list[ContextEvent] = []
        if self.path is not None and self.path.exists():
            self._events = list(load_events(self.path))

    @property
    def events(self) -> tuple[ContextEvent, ...]:
        return tuple(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def append(self, at: int, author: Author, kind: EventKind, payload: dict) -> int:
        """Validate, assign the next seq, persist, and return the seq."""
        validate_event_fields(at, author, kind, payload)
        seq = len(self._events) + 1
        ev = ContextEvent(seq=seq, at=at, author=author, kind=kind, payload=payload)
        if self.path is not None:
            try:
                with open(self.path, "a", encoding="ascii") as fh:
                    fh.write(canonical_event_line(ev) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageError(f"event log write failed: {exc}") from exc
        self._events.append(ev)
        return seq

    def to_bytes(self) -> bytes:
        return log_to_bytes(self._events)


def load_events(path: str | Path) -> tuple[ContextEvent, ...]:
    """Load a log file; a partial trailing line (torn write) is dropped."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"event log read failed: {exc}") from exc
    events: list[ContextEvent] = []
    lines = raw.split(b"\n")
    trailing = lines.pop() if lines else b""
    for i, line in enumerate(lines):
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {i + 1}: invalid JSON: {exc}") from exc
        events.append(parse_event(obj, f"line {i + 1}"))
    if trailing:
        try:
            events.append(parse_event(json.loads(trailing), "trailing line"))
        except (json.JSONDecodeError, ValidationError):
            pass  # torn final write: keep the loadable prefix
    for i, ev in enumerate(events):
        if ev.seq != i + 1:
            raise ValidationError(f"line {i + 1}: seq {ev.seq} out of order (expected {i + 1})")
    return tuple(events)


# ---------------------------------------------------------------------------
# Replay


@dataclass(frozen=True)
class Rejection:
    seq: int
    reason: str


@dataclass
class DispatchRecord:
    """Lifecycle of one dispatched assignment, derived during replay."""

    seq: int
    at: int
    plan_id: str
    unit_id: str
    point_id: str
    travel_time_s: int
    people: int
    special_people: int
    released_seq: int | None = None
    fulfilled: bool = False


@dataclass(frozen=True)
class ReplayResult:
    world: WorldState
    rejections: tuple[Rejection, ...]
    dispatches: tuple[DispatchRecord, ...]

    def rejected_seqs(self) -> frozenset[int]:
        return frozenset(r.seq for r in self.rejections)


class _TransitionRejected(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def commitment_for(unit: VolunteerUnit, demand: int, special: int) -> tuple[int, int]:
    """People one dispatched unit picks up at a point with the given residual
    (demand, special) need: special-needs riders require a capable vehicle,
    everyone else takes any seat.

    Returns (people, special_people) with people including special_people.
    """
    seats = available_seats(unit.vehicle)
    if unit.vehicle.special_needs_capable:
        sp = min(special, seats)
    else:
        sp = 0
    ns = min(demand - special, seats - sp)
    return sp + ns, sp


def replay(initial: WorldState, events: tuple[ContextEvent, ...] | list[ContextEvent]) -> ReplayResult:
    """Fold events into a world state; invalid transitions are audited and
    skipped, never fatal. Deterministic: same inputs, same result."""
    world = initial
    rejections: list[Rejection] = []
    dispatches: list[DispatchRecord] = []
    # unit id -> its active (not released, not fulfilled) dispatch record
    active: dict[str, DispatchRecord] = {}

    for ev in events:
        try:
            validate_event_fields(ev.at, ev.author, ev.kind, ev.payload)
            world = _apply(world, ev, active, dispatches)
        except (_TransitionRejected, ValidationError) as exc:
            reason = exc.reason if isinstance(exc, _TransitionRejected) else str(exc)
            rejections.append(Rejection(ev.seq, reason))
            continue
        world = world.with_clock(ev.at)
    return ReplayResult(world=world, rejections=tuple(rejections), dispatches=tuple(dispatches))


def snapshot(log: EventLog, initial: WorldState) -> WorldState:
    """World implied by the full log; equal to replay over log.events."""
    return replay(initial, log.events).world


def _apply(
    world: WorldState,
    ev: ContextEvent,
    active: dict[str, DispatchRecord],
    dispatches: list[DispatchRecord],
) -> WorldState:
    p = ev.payload
    kind = ev.kind

    if kind is EventKind.DRIVER_REGISTERED:
        unit_id = p["participant_id"]
        if world.unit(unit_id) is not None:
            raise _TransitionRejected(f"unit {unit_id} already registered")
        unit = VolunteerUnit(
            id=unit_id,
            driver_name=p["driver_name"],
            location=parse_geopoint(p["location"]),
            vehicle=parse_vehicle(p["vehicle"]),
            qualification=Qualification.PENDING,
            availability=Availability.AVAILABLE,
        )
        return world.add_unit(unit)

    if kind is EventKind.REGISTRATION_VETTED:
        unit = world.unit(p["registration_id"])
        if unit is None:
            raise _TransitionRejected(f"unknown registration {p['registration_id']}")
        if unit.qualification is not Qualification.PENDING:
            raise _TransitionRejected(f"registration {unit.id} already decided")
        if p["verdict"] == "approved":
            unit = replace(unit, qualification=Qualification.APPROVED)
        else:
            unit = replace(unit, qualification=Qualification.REJECTED, availability=Availability.UNAVAILABLE)
        return world.with_unit(unit)

    if kind in (EventKind.POINT_REPORTED, EventKind.DEMAND_UPDATED):
        if kind is EventKind.POINT_REPORTED and p["claim"]["type"] == "need_note":
            if world.point(p["point_id"]) is None:
                raise _TransitionRejected(f"unknown point {p['point_id']}")
            return world  # stored for the record, no world effect
        point = world.point(p["point_id"])
        if point is None:
            raise _TransitionRejected(f"unknown point {p['point_id']}")
        if point.status is PointStatus.CLEARED:
            raise _TransitionRejected(f"point {point.id} already cleared")
        src = p["claim"] if kind is EventKind.POINT_REPORTED else p
        point = replace(point, demand=src["demand"], special_needs=src["special_needs"])
        if kind is EventKind.DEMAND_UPDATED and "priority" in p:
            point = replace(point, priority=Priority(p["priority"]))
        return world.with_point(point)

    if kind is EventKind.ROAD_CLOSED:
        closure = parse_closure(p["closure"])
        if world.closure(closure.id) is not None:
            raise _TransitionRejected(f"closure {closure.id} already active")
        return world.add_closure(closure)

    if kind is EventKind.ROAD_REOPENED:
        if world.closure(p["closure_id"]) is None:
            raise _TransitionRejected(f"unknown closure {p['closure_id']}")
        return world.remove_closure(p["closure_id"])

    if kind is EventKind.UNIT_STATUS_CHANGED:
        unit = world.unit(p["unit_id"])
        if unit is None:
            raise _TransitionRejected(f"unknown unit {p['unit_id']}")
        target = Availability(p["availability"])
        if target in (Availability.ASSIGNED, Availability.DISPATCHED) and unit.qualification is not Qualification.APPROVED:
            raise _TransitionRejected(f"unit {unit.id} is not approved")
        if target is not Availability.DISPATCHED and unit.id in active:
            # Pulling a committed unit off the road returns its riders' need.
            rec = active.pop(unit.id)
            rec.released_seq = ev.seq
            point = world.point(rec.point_id)
            if point is not None and point.status is not PointStatus.CLEARED:
                world = world.with_point(
                    replace(
                        point,
                        demand=point.demand + rec.people,
                        special_needs=point.special_needs + rec.special_people,
                    )
                )
        return world.with_unit(replace(unit, availability=target))

    if kind is EventKind.PLAN_DISPATCHED:
        staged: list[tuple[VolunteerUnit, str, int]] = []
        for a in p["assignments"]:
            unit = world.unit(a["unit_id"])
            if unit is None:
                raise _TransitionRejected(f"unknown unit {a['unit_id']}")
            if unit.qualification is not Qualification.APPROVED:
                raise _TransitionRejected(f"unit {unit.id} is not approved")
            if unit.id in active:
                raise _TransitionRejected(f"unit {unit.id} already dispatched")
            point = world.point(a["point_id"])
            if point is None:
                raise _TransitionRejected(f"unknown point {a['point_id']}")
            if point.status is PointStatus.CLEARED:
                raise _TransitionRejected(f"point {point.id} already cleared")
            staged.append((unit, a["point_id"], a["travel_time_s"]))
        for unit, point_id, travel_s in staged:
            point = world.point(point_id)
            assert point is not None
            people, sp = commitment_for(unit, point.demand, point.special_needs)
            rec = DispatchRecord(
                seq=ev.seq,
                at=ev.at,
                plan_id=p["plan_id"],
                unit_id=unit.id,
                point_id=point_id,
                travel_time_s=travel_s,
                people=people,
                special_people=sp,
            )
            dispatches.append(rec)
            active[unit.id] = rec
            point = replace(point, demand=point.demand - people, special_needs=point.special_needs - sp)
            if point.status is PointStatus.OPEN:
                point = replace(point, status=PointStatus.EVACUATING)
            world = world.with_point(point)
        return world

    if kind is EventKind.POINT_CLEARED:
        point = world.point(p["point_id"])
        if point is None:
            raise _TransitionRejected(f"unknown point {p['point_id']}")
        if point.status is PointStatus.CLEARED:
            raise _TransitionRejected(f"point {point.id} already cleared")
        if point.demand > 0:
            raise _TransitionRejected(f"point {point.id} still has demand {point.demand}")
        for unit_id in [u for u, rec in active.items() if rec.point_id == point.id]:
            active.pop(unit_id).fulfilled = True
        return world.with_point(replace(point, status=PointStatus.CLEARED, demand=0, special_needs=0))

    # plan_proposed, feedback_submitted, bulletin_published: recorded, no world effect
    return world


def scan_author_registration(
    events: tuple[ContextEvent, ...] | list[ContextEvent],
    initial_participants: dict[str, Role],
    rejected_seqs: frozenset[int] = frozenset(),
) -> list[str]:
    """Audit that no applied world-mutating event has an unregistered author.

    Participants are those provisioned up front (decision-makers, affected
    reporters) plus drivers introduced by registration events. System-authored
    events are the platform's own and always pass.
    """
    registry = dict(initial_participants)
    problems: list[str] = []
    for ev in events:
        if ev.kind is EventKind.DRIVER_REGISTERED and ev.seq not in rejected_seqs:
            registry[ev.payload["participant_id"]] = Role.DRIVER
        if ev.seq in rejected_seqs or ev.kind not in WORLD_MUTATING_KINDS:
            continue
        if ev.author.role is Role.SYSTEM:
            continue
        if registry.get(ev.author.id) != ev.author.role:
            problems.append(f"seq {ev.seq}: unregistered author {ev.author.id} ({ev.author.role.value})")
    return problems


__all__ = [
    "AUTHORABLE_KINDS",
    "Author",
    "ContextEvent",
    "DispatchRecord",
    "EventKind",
    "EventLog",
    "Rejection",
    "ReplayResult",
    "StorageError",
    "WORLD_MUTATING_KINDS",
    "canonical_event_line",
    "commitment_for",
    "event_to_jsonable",
    "load_events",
    "log_to_bytes",
    "parse_event",
    "replay",
    "scan_author_registration",
    "snapshot",
    "validate_payload",
    "validate_event_fields",
]
