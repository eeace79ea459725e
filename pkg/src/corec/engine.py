"""Orchestration over the event log: registration and vetting, restricted
field reporting, plan proposal and dispatch, automatic re-planning when the
situation changes, live notification filtering, and post-crisis synthesis.

All mutations funnel through one lock around the append-only log; reads work
on a replay snapshot cached by log length.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .domain import (
    DEFAULT_PRIORITY_WEIGHTS,
    Availability,
    PointStatus,
    Priority,
    Qualification,
    RescuePoint,
    Role,
    ValidationError,
    VolunteerUnit,
    WorldState,
    parse_closure,
    parse_geopoint,
    parse_vehicle,
)
from .recommend import (
    EXACT_MAX_POINTS,
    EXACT_MAX_UNITS,
    AssignmentPlan,
    AssignmentInstance,
    PlanStatus,
    parse_plan,
    plan_to_jsonable,
    solve_exact,
    solve_greedy,
)
from . import recommend
from .store import (
    Author,
    ContextEvent,
    EventKind,
    EventLog,
    ReplayResult,
    canonical_event_line,
    commitment_for,
    replay,
    scan_author_registration,
)
from .travel import RoutingProviderConfig, TimeMatrix, TravelTimeService

SYSTEM_AUTHOR = Author(id="system", role=Role.SYSTEM)

# Event kinds that can invalidate the current plan and trigger re-planning.
REPLAN_KINDS = frozenset(
    {
        EventKind.DEMAND_UPDATED,
        EventKind.ROAD_CLOSED,
        EventKind.ROAD_REOPENED,
        EventKind.UNIT_STATUS_CHANGED,
    }
)


class RoleError(Exception):
    """Caller lacks the role an operation requires."""


class StateError(Exception):
    """Operation conflicts with current state (duplicate, wrong status)."""


@dataclass(frozen=True)
class Accepted:
    seq: int


@dataclass(frozen=True)
class Rejected:
    reason: str


@dataclass(frozen=True)
class Registration:
    id: str
    driver_name: str
    status: Qualification
    decided_by: str | None = None


@dataclass(frozen=True)
class SynthesisReport:
    seq_from: int
    seq_to: int
    people_evacuated: int
    points_cleared: int
    units_dispatched: int
    mean_response_s: float | None
    timeline: tuple[dict, ...]
    feedback_count: int
    feedback_histogram: dict[int, int]


def synthesis_to_jsonable(report: SynthesisReport) -> dict:
    return {
        "window": [report.seq_from, report.seq_to],
        "totals": {
            "people_evacuated": report.people_evacuated,
            "points_cleared": report.points_cleared,
            "units_dispatched": report.units_dispatched,
            "mean_response_s": report.mean_response_s,
        },
        "timeline": list(report.timeline),
        "feedback_digest": {
            "count": report.feedback_count,
            "histogram": {str(k): v for k, v in sorted(report.feedback_histogram.items())},
        },
    }


def should_replan(ev: ContextEvent) -> bool:
    """True exactly for the kinds that change demand or reachability."""
    if ev.kind in REPLAN_KINDS:
        return True
    if ev.kind is EventKind.POINT_REPORTED:
        claim = ev.payload.get("claim")
        return isinstance(claim, dict) and claim.get("type") == "demand_update"
    return False


def _event_digest(ev: ContextEvent) -> dict:
    digest = {"seq": ev.seq, "at": ev.at, "kind": ev.kind.value, "author": ev.author.id}
    for key in ("point_id", "unit_id", "plan_id", "closure_id"):
        if key in ev.payload:
            digest[key] = ev.payload[key]
    return digest


def build_synthesis(
    events: Sequence[ContextEvent], seq_from: int, seq_to: int
) -> SynthesisReport:
    """Totals, timeline, and feedback digest for a seq window, computed from
    the log slice alone. An empty window yields zero totals."""
    for name, value, minimum in (("from", seq_from, 1), ("to", seq_to, 0)):
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            raise ValidationError(f"synthesis window: '{name}' must be an integer >= {minimum}")
    window = [ev for ev in events if seq_from <= ev.seq <= seq_to]
    evacuated = 0
    cleared = 0
    units: set[str] = set()
    travel_times: list[int] = []
    histogram = {r: 0 for r in range(1, 6)}
    feedback_count = 0
    # unit id -> (point id, people) still en route from a dispatch in window
    en_route: dict[str, tuple[str, int]] = {}
    for ev in window:
        if ev.kind is EventKind.PLAN_DISPATCHED:
            for a in ev.payload.get("assignments", []):
                people = int(a.get("people", 0))
                evacuated += people
                en_route[a["unit_id"]] = (a["point_id"], people)
                units.add(a["unit_id"])
                travel_times.append(int(a["travel_time_s"]))
        elif ev.kind is EventKind.UNIT_STATUS_CHANGED:
            if ev.payload.get("availability") != Availability.DISPATCHED.value:
                _, people = en_route.pop(ev.payload.get("unit_id", ""), ("", 0))
                evacuated -= people
        elif ev.kind is EventKind.POINT_CLEARED:
            cleared += 1
            for unit_id in [u for u, (pid, _) in en_route.items() if pid == ev.payload.get("point_id")]:
                # Arrival confirmed by the clearing; keep the count.
                del en_route[unit_id]
        elif ev.kind is EventKind.FEEDBACK_SUBMITTED:
            feedback_count += 1
            rating = ev.payload.get("rating")
            if rating in histogram:
                histogram[rating] += 1
    mean_response = (sum(travel_times) / len(travel_times)) if travel_times else None
    return SynthesisReport(
        seq_from=seq_from,
        seq_to=seq_to,
        people_evacuated=max(0, evacuated),
        points_cleared=cleared,
        units_dispatched=len(units),
        mean_response_s=mean_response,
        timeline=tuple(_event_digest(ev) for ev in window),
        feedback_count=feedback_count,
        feedback_histogram=histogram,
    )


# ---------------------------------------------------------------------------
# Notification filtering


def _project_for_driver(ev: ContextEvent, pid: str) -> dict | None:
    from .store import event_to_jsonable

    if ev.kind is EventKind.PLAN_DISPATCHED:
        own = [a for a in ev.payload.get("assignments", []) if a.get("unit_id") == pid]
        if not own:
            return None
        out = event_to_jsonable(ev)
        out["payload"] = {"plan_id": ev.payload.get("plan_id"), "assignments": own}
        return out
    return event_to_jsonable(ev)


def notifications_for(
    events: Sequence[ContextEvent], role: Role, pid: str, from_seq: int = 1
) -> list[dict]:
    """Role-filtered projections of the log, in seq order.

    Decision-makers see everything. Drivers see bulletins plus events about
    their own unit: registration, vetting, status changes, and the slice of
    any dispatch that names them. Affected participants see bulletins, their
    own submissions, and status changes of points they reported.
    """
    from .store import event_to_jsonable

    out: list[dict] = []
    reported: set[str] = set()
    for ev in events:
        if role is Role.AFFECTED and ev.kind is EventKind.POINT_REPORTED and ev.author.id == pid:
            reported.add(ev.payload.get("point_id", ""))
        if ev.seq < from_seq:
            continue
        if role is Role.DECISION_MAKER:
            out.append(event_to_jsonable(ev))
            continue
        if ev.kind is EventKind.BULLETIN_PUBLISHED or ev.author.id == pid:
            out.append(event_to_jsonable(ev))
            continue
        if role is Role.DRIVER:
            concerns = (
                ev.payload.get("participant_id")
                or ev.payload.get("registration_id")
                or ev.payload.get("unit_id")
            )
            if ev.kind is EventKind.PLAN_DISPATCHED:
                projected = _project_for_driver(ev, pid)
                if projected is not None:
                    out.append(projected)
            elif concerns == pid:
                out.append(event_to_jsonable(ev))
        elif role is Role.AFFECTED:
            if (
                ev.kind in (EventKind.POINT_REPORTED, EventKind.DEMAND_UPDATED, EventKind.POINT_CLEARED)
                and ev.payload.get("point_id") in reported
            ):
                out.append(event_to_jsonable(ev))
    return out


# ---------------------------------------------------------------------------
# Engine


@dataclass(frozen=True)
class _Derived:
    """Everything recomputed from the log, cached by log length."""

    result: ReplayResult
    plans: dict[str, AssignmentPlan]
    latest_plan_id: str | None
    plan_count: int
    participants: dict[str, Role]
    vetted_by: dict[str, str]


class ContextEngine:
    """Single-writer orchestrator for one crisis context."""

    def __init__(
        self,
        initial: WorldState,
        *,
        log: EventLog | None = None,
        participants: dict[str, Role] | None = None,
        routing: TravelTimeService | None = None,
        weights: dict[Priority, int] | None = None,
        bulletin_path: str | Path | None = None,
        clock: Callable[[], int] | None = None,
    ):
        self.initial = initial
        self.log = log if log is not None else EventLog()
        self._static_participants = dict(participants or {})
        self.routing = routing if routing is not None else TravelTimeService(RoutingProviderConfig())
        self.weights = dict(weights) if weights else dict(DEFAULT_PRIORITY_WEIGHTS)
        self.bulletin_path = Path(bulletin_path) if bulletin_path else None
        self._clock = clock if clock is not None else (lambda: int(time.time()))
        self._lock = threading.RLock()
        self.notify = threading.Condition()
        self._replanning = False
        self._cache: tuple[int, _Derived] | None = None

    # -- snapshot & derived state ------------------------------------------

    def _derived(self) -> _Derived:
        with self._lock:
            n = len(self.log.events)
            if self._cache is not None and self._cache[0] == n:
                return self._cache[1]
            result = replay(self.initial, self.log.events)
            rejected = result.rejected_seqs()
            plans: dict[str, AssignmentPlan] = {}
            latest: str | None = None
            plan_count = 0
            participants = dict(self._static_participants)
            for u in self.initial.units:
                participants.setdefault(u.id, Role.DRIVER)
            vetted_by: dict[str, str] = {}
            for ev in self.log.events:
                if ev.kind is EventKind.PLAN_PROPOSED:
                    plan_count += 1
                    if ev.seq not in rejected:
                        plan = parse_plan(ev.payload["plan"])
                        plans[plan.id] = plan
                        latest = plan.id
                elif ev.kind is EventKind.PLAN_DISPATCHED and ev.seq not in rejected:
                    plan_id = ev.payload.get("plan_id")
                    if plan_id in plans:
                        plans[plan_id] = replace(plans[plan_id], status=PlanStatus.DISPATCHED)
                elif ev.kind is EventKind.DRIVER_REGISTERED and ev.seq not in rejected:
                    participants[ev.payload["participant_id"]] = Role.DRIVER
                elif ev.kind is EventKind.REGISTRATION_VETTED and ev.seq not in rejected:
                    vetted_by[ev.payload["registration_id"]] = ev.author.id
            derived = _Derived(
                result=result,
                plans=plans,
                latest_plan_id=latest,
                plan_count=plan_count,
                participants=participants,
                vetted_by=vetted_by,
            )
            self._cache = (n, derived)
            return derived

    def result(self) -> ReplayResult:
        return self._derived().result

    def world(self) -> WorldState:
        return self._derived().result.world

    def participants(self) -> dict[str, Role]:
        return dict(self._derived().participants)

    def role_of(self, pid: str) -> Role | None:
        return self._derived().participants.get(pid)

    def plans(self) -> dict[str, AssignmentPlan]:
        return dict(self._derived().plans)

    def get_plan(self, plan_id: str) -> AssignmentPlan | None:
        d = self._derived()
        if plan_id == "latest":
            return d.plans.get(d.latest_plan_id) if d.latest_plan_id else None
        return d.plans.get(plan_id)

    def scan_restriction(self) -> list[str]:
        d = self._derived()
        static = dict(self._static_participants)
        for u in self.initial.units:
            static.setdefault(u.id, Role.DRIVER)
        return scan_author_registration(
            self.log.events, static, d.result.rejected_seqs()
        )

    # -- internals -----------------------------------------------------------

    def _now(self, at: int | None) -> int:
        return self._clock() if at is None else at

    def _append(self, at: int, author: Author, kind: EventKind, payload: dict) -> int:
        with self._lock:
            seq = self.log.append(at, author, kind, payload)
            self._cache = None
        with self.notify:
            self.notify.notify_all()
        return seq

    def _require_role(self, pid: str, *roles: Role) -> Role:
        role = self.role_of(pid)
        if role is None:
            raise RoleError(f"unknown participant {pid}")
        if role not in roles:
            raise RoleError(f"participant {pid} has role {role.value}, needs one of "
                            f"{[r.value for r in roles]}")
        return role

    def _author(self, pid: str) -> Author:
        role = self.role_of(pid)
        if role is None:
            raise RoleError(f"unknown participant {pid}")
        return Author(id=pid, role=role)

    # -- registration --------------------------------------------------------

    def register_driver(self, application: dict, at: int | None = None) -> tuple[Registration, int]:
        """Record a pending driver application; the unit stays ineligible
        until a decision-maker approves it."""
        if not isinstance(application, dict):
            raise ValidationError("application: expected object")
        driver_name = application.get("driver_name")
        contact = application.get("contact")
        if not driver_name or not isinstance(driver_name, str):
            raise ValidationError("application: 'driver_name' must be a non-empty string")
        if not contact or not isinstance(contact, str):
            raise ValidationError("application: 'contact' must be a non-empty string")
        location = parse_geopoint(application.get("location"), "application.location")
        vehicle = parse_vehicle(application.get("vehicle"), "application.vehicle")
        with self._lock:
            unit_id = application.get("id") or self._next_unit_id()
            if not isinstance(unit_id, str) or not unit_id:
                raise ValidationError("application: 'id' must be a non-empty string")
            if self.world().unit(unit_id) is not None:
                raise StateError(f"unit {unit_id} already registered")
            payload = {
                "participant_id": unit_id,
                "driver_name": driver_name,
                "contact": contact,
                "location": {"lat": location.lat, "lon": location.lon},
                "vehicle": {
                    "id": vehicle.id,
                    "mode": vehicle.mode.value,
                    "capacity": vehicle.capacity,
                    "special_needs_capable": vehicle.special_needs_capable,
                },
            }
            seq = self._append(self._now(at), SYSTEM_AUTHOR, EventKind.DRIVER_REGISTERED, payload)
        return Registration(id=unit_id, driver_name=driver_name, status=Qualification.PENDING), seq

    def _next_unit_id(self) -> str:
        taken = {u.id for u in self.world().units}
        n = len(taken) + 1
        while f"u-{n:03d}" in taken:
            n += 1
        return f"u-{n:03d}"

    def registration(self, registration_id: str) -> Registration | None:
        d = self._derived()
        unit = d.result.world.unit(registration_id)
        if unit is None:
            return None
        return Registration(
            id=unit.id,
            driver_name=unit.driver_name,
            status=unit.qualification,
            decided_by=d.vetted_by.get(unit.id),
        )

    def vet_registration(
        self, decider: str, registration_id: str, verdict: str, at: int | None = None
    ) -> Registration:
        self._require_role(decider, Role.DECISION_MAKER)
        if verdict not in ("approved", "rejected"):
            raise ValidationError("verdict must be 'approved' or 'rejected'")
        with self._lock:
            unit = self.world().unit(registration_id)
            if unit is None:
                raise StateError(f"unknown registration {registration_id}")
            if unit.qualification is not Qualification.PENDING:
                raise StateError(f"registration {registration_id} already decided")
            self._append(
                self._now(at),
                Author(id=decider, role=Role.DECISION_MAKER),
                EventKind.REGISTRATION_VETTED,
                {"registration_id": registration_id, "verdict": verdict},
            )
        reg = self.registration(registration_id)
        assert reg is not None
        return reg

    # -- field reporting -----------------------------------------------------

    def submit_report(self, author_id: str, claim: dict, at: int | None = None) -> Accepted | Rejected:
        """Map a field report claim onto its event kind. Unregistered authors
        and claims that cannot apply to the current world are rejected before
        anything reaches the log."""
        role = self.role_of(author_id)
        if role is None or role is Role.SYSTEM:
            return Rejected("unregistered")
        author = Author(id=author_id, role=role)
        if not isinstance(claim, dict):
            return Rejected("invalid")
        kind = claim.get("type")
        try:
            with self._lock:
                world = self.world()
                if kind == "demand_update":
                    point = world.point(claim.get("point_id", ""))
                    if point is None or point.status is PointStatus.CLEARED:
                        return Rejected("invalid")
                    payload = {
                        "point_id": point.id,
                        "claim": {
                            "type": "demand_update",
                            "demand": claim.get("demand"),
                            "special_needs": claim.get("special_needs", 0),
                        },
                    }
                    seq = self._append(self._now(at), author, EventKind.POINT_REPORTED, payload)
                elif kind == "need_note":
                    point = world.point(claim.get("point_id", ""))
                    if point is None:
                        return Rejected("invalid")
                    payload = {
                        "point_id": point.id,
                        "claim": {
                            "type": "need_note",
                            "text": claim.get("text"),
                            "tags": claim.get("tags", []),
                        },
                    }
                    seq = self._append(self._now(at), author, EventKind.POINT_REPORTED, payload)
                elif kind == "closure":
                    closure = parse_closure(claim.get("closure"), "claim.closure")
                    if world.closure(closure.id) is not None:
                        return Rejected("invalid")
                    seq = self._append(
                        self._now(at), author, EventKind.ROAD_CLOSED, {"closure": claim["closure"]}
                    )
                elif kind == "reopening":
                    closure_id = claim.get("closure_id", "")
                    if world.closure(closure_id) is None:
                        return Rejected("invalid")
                    seq = self._append(
                        self._now(at), author, EventKind.ROAD_REOPENED, {"closure_id": closure_id}
                    )
                else:
                    return Rejected("invalid")
        except ValidationError:
            return Rejected("invalid")
        self._maybe_replan(self.log.events[seq - 1])
        return Accepted(seq)

    def update_demand(
        self,
        author_id: str,
        point_id: str,
        demand: int,
        special_needs: int = 0,
        priority: str | None = None,
        at: int | None = None,
    ) -> int:
        self._require_role(author_id, Role.DECISION_MAKER)
        with self._lock:
            point = self.world().point(point_id)
            if point is None:
                raise StateError(f"unknown point {point_id}")
            if point.status is PointStatus.CLEARED:
                raise StateError(f"point {point_id} already cleared")
            payload: dict[str, Any] = {
                "point_id": point_id,
                "demand": demand,
                "special_needs": special_needs,
            }
            if priority is not None:
                payload["priority"] = priority
            seq = self._append(
                self._now(at), self._author(author_id), EventKind.DEMAND_UPDATED, payload
            )
        self._maybe_replan(self.log.events[seq - 1])
        return seq

    def set_unit_status(
        self, author_id: str, unit_id: str, availability: str, at: int | None = None
    ) -> int:
        role = self._require_role(author_id, Role.DECISION_MAKER, Role.DRIVER, Role.SYSTEM)
        if role is Role.DRIVER and unit_id != author_id:
            raise RoleError(f"driver {author_id} may only change their own status")
        with self._lock:
            unit = self.world().unit(unit_id)
            if unit is None:
                raise StateError(f"unknown unit {unit_id}")
            target = Availability(availability)
            if (
                target in (Availability.ASSIGNED, Availability.DISPATCHED)
                and unit.qualification is not Qualification.APPROVED
            ):
                raise StateError(f"unit {unit_id} is not approved")
            seq = self._append(
                self._now(at),
                self._author(author_id),
                EventKind.UNIT_STATUS_CHANGED,
                {"unit_id": unit_id, "availability": target.value},
            )
        self._maybe_replan(self.log.events[seq - 1])
        return seq

    def clear_point(self, author_id: str, point_id: str, at: int | None = None) -> int:
        self._require_role(author_id, Role.DECISION_MAKER)
        with self._lock:
            point = self.world().point(point_id)
            if point is None:
                raise StateError(f"unknown point {point_id}")
            if point.status is PointStatus.CLEARED:
                raise StateError(f"point {point_id} already cleared")
            if point.demand > 0:
                raise StateError(f"point {point_id} still has demand {point.demand}")
            return self._append(
                self._now(at), self._author(author_id), EventKind.POINT_CLEARED, {"point_id": point_id}
            )

    def submit_feedback(
        self, author_id: str, rating: int, text: str, at: int | None = None
    ) -> Accepted | Rejected:
        role = self.role_of(author_id)
        if role is None or role is Role.SYSTEM:
            return Rejected("unregistered")
        if not isinstance(rating, int) or isinstance(rating, bool) or not 1 <= rating <= 5:
            raise ValidationError("rating must be an integer in 1..5")
        seq = self._append(
            self._now(at),
            Author(id=author_id, role=role),
            EventKind.FEEDBACK_SUBMITTED,
            {"rating": rating, "text": text},
        )
        return Accepted(seq)

    def publish_bulletin(self, author_id: str | None, text: str, at: int | None = None) -> int:
        """Outbound public announcement; mirrored to the bulletin sink file."""
        if author_id is None:
            author = SYSTEM_AUTHOR
        else:
            self._require_role(author_id, Role.DECISION_MAKER)
            author = self._author(author_id)
        seq = self._append(self._now(at), author, EventKind.BULLETIN_PUBLISHED, {"text": text})
        if self.bulletin_path is not None:
            ev = self.log.events[-1]
            with open(self.bulletin_path, "a", encoding="ascii") as fh:
                fh.write(canonical_event_line(ev) + "\n")
        return seq

    # -- planning ------------------------------------------------------------

    def _build_instance(
        self,
        world: WorldState,
        point_ids: Sequence[str] | None = None,
        include_dispatched: bool = False,
    ) -> AssignmentInstance:
        points = [
            p for p in world.rescue_points if p.status is not PointStatus.CLEARED and p.demand > 0
        ]
        if point_ids is not None:
            wanted = set(point_ids)
            known = {p.id for p in world.rescue_points}
            for pid in wanted:
                if pid not in known:
                    raise ValidationError(f"unknown point {pid}")
            points = [p for p in points if p.id in wanted]
        active_units = {rec.unit_id: rec for rec in self._active_dispatches()}
        units = []
        for u in world.units:
            if u.qualification is not Qualification.APPROVED:
                continue
            if u.availability is Availability.AVAILABLE:
                units.append(u)
            elif include_dispatched and u.availability is Availability.DISPATCHED and u.id in active_units:
                units.append(u)
        if include_dispatched:
            keep = {p.id for p in points} | {rec.point_id for rec in self._active_dispatches()}
            points = [
                p for p in world.rescue_points if p.status is not PointStatus.CLEARED and p.id in keep
            ]
        matrix = self.routing.build_time_matrix(units, points, world.closures)
        return AssignmentInstance(
            points=tuple(points), units=tuple(units), matrix=matrix, weights=self.weights
        )

    def _active_dispatches(self):
        return [
            rec
            for rec in self.result().dispatches
            if rec.released_seq is None and not rec.fulfilled
        ]

    def _edited_world(self, world: WorldState, edits: dict) -> WorldState:
        """Apply what-if edits (demand/priority overrides, closure toggles)
        to a throwaway copy of the world."""
        if not isinstance(edits, dict):
            raise ValidationError("edits: expected object")
        for pid, changes in (edits.get("points") or {}).items():
            point = world.point(pid)
            if point is None:
                raise ValidationError(f"edits: unknown point {pid}")
            if "demand" in changes:
                demand = changes["demand"]
                if not isinstance(demand, int) or demand < 0:
                    raise ValidationError(f"edits: demand for {pid} must be a non-negative integer")
                point = replace(point, demand=demand, special_needs=min(point.special_needs, demand))
            if "special_needs" in changes:
                special = changes["special_needs"]
                if not isinstance(special, int) or not 0 <= special <= point.demand:
                    raise ValidationError(f"edits: special_needs for {pid} out of range")
                point = replace(point, special_needs=special)
            if "priority" in changes:
                point = replace(point, priority=Priority(changes["priority"]))
            world = world.with_point(point)
        for closure_obj in edits.get("add_closures") or []:
            closure = parse_closure(closure_obj, "edits.add_closures")
            if world.closure(closure.id) is not None:
                raise ValidationError(f"edits: closure {closure.id} already active")
            world = world.add_closure(closure)
        for closure_id in edits.get("remove_closures") or []:
            if world.closure(closure_id) is None:
                raise ValidationError(f"edits: unknown closure {closure_id}")
            world = world.remove_closure(closure_id)
        return world

    def propose_plan(
        self,
        author_id: str,
        point_ids: Sequence[str] | None = None,
        dry_run: bool = False,
        edits: dict | None = None,
        at: int | None = None,
    ) -> AssignmentPlan:
        """Solve the current instance and record the proposal. With dry_run
        the plan is computed and returned but nothing is appended."""
        self._require_role(author_id, Role.DECISION_MAKER)
        if edits and not dry_run:
            raise ValidationError("edits are only allowed with dry_run")
        with self._lock:
            world = self.world()
            if edits:
                world = self._edited_world(world, edits)
            instance = self._build_instance(world, point_ids)
            plan = self._solve(instance, plan_id="preview" if dry_run else self._next_plan_id())
            if dry_run:
                return plan
            self._append(
                self._now(at),
                self._author(author_id),
                EventKind.PLAN_PROPOSED,
                {"plan": plan_to_jsonable(plan)},
            )
            if instance.matrix.degraded:
                self.publish_bulletin(
                    None,
                    "routing degraded: offline estimates used for "
                    f"{len(instance.matrix.degraded)} pair(s)",
                    at=self._now(at),
                )
            return plan

    def _solve(self, instance: AssignmentInstance, plan_id: str) -> AssignmentPlan:
        if len(instance.units) <= EXACT_MAX_UNITS and len(instance.points) <= EXACT_MAX_POINTS:
            return solve_exact(instance, plan_id=plan_id)
        return solve_greedy(instance, plan_id=plan_id)

    def _next_plan_id(self) -> str:
        return f"plan-{self._derived().plan_count + 1}"

    def dispatch(
        self,
        author_id: str,
        plan_id: str,
        unit_ids: Sequence[str] | None = None,
        at: int | None = None,
    ) -> tuple[int, list[int]]:
        """Commit selected units of a proposed plan: one dispatch event
        carrying the assignments, then one status event per unit."""
        self._require_role(author_id, Role.DECISION_MAKER)
        with self._lock:
            plan = self.get_plan(plan_id)
            if plan is None:
                raise StateError(f"unknown plan {plan_id}")
            chosen = list(unit_ids) if unit_ids is not None else sorted(plan.assignments)
            if not chosen:
                raise ValidationError("no units selected for dispatch")
            world = self.world()
            seen: set[str] = set()
            for unit_id in chosen:
                if unit_id in seen:
                    raise ValidationError(f"unit {unit_id} listed twice")
                seen.add(unit_id)
                if unit_id not in plan.assignments:
                    raise ValidationError(f"unit {unit_id} is not part of plan {plan.id}")
                unit = world.unit(unit_id)
                if unit is None:
                    raise ValidationError(f"unknown unit {unit_id}")
                if unit.qualification is not Qualification.APPROVED:
                    raise StateError(f"unit {unit_id} is not approved")
                if unit.availability is not Availability.AVAILABLE:
                    raise StateError(f"unit {unit_id} is {unit.availability.value}")
                point = world.point(plan.assignments[unit_id])
                if point is None or point.status is PointStatus.CLEARED:
                    raise StateError(f"point {plan.assignments[unit_id]} is not open")
            # Travel estimates are taken at dispatch time so closures reported
            # after the proposal are reflected.
            units = [world.unit(u) for u in sorted(seen)]
            points_by_id = {plan.assignments[u.id]: world.point(plan.assignments[u.id]) for u in units}
            matrix = self.routing.build_time_matrix(
                units, list(points_by_id.values()), world.closures
            )
            assignments = []
            residual: dict[str, tuple[int, int]] = {
                p.id: (p.demand, p.special_needs) for p in points_by_id.values()
            }
            for unit in units:
                point_id = plan.assignments[unit.id]
                travel = matrix.get(unit.id, point_id)
                if travel is None:
                    raise StateError(f"assignment ({unit.id}, {point_id}) is unreachable now")
                demand, special = residual[point_id]
                people, sp = commitment_for(unit, demand, special)
                residual[point_id] = (demand - people, special - sp)
                assignments.append(
                    {
                        "unit_id": unit.id,
                        "point_id": point_id,
                        "travel_time_s": travel,
                        "people": people,
                        "special_people": sp,
                    }
                )
            was_replanning = self._replanning
            self._replanning = True
            try:
                author = self._author(author_id)
                now = self._now(at)
                dispatch_seq = self._append(
                    now, author, EventKind.PLAN_DISPATCHED,
                    {"plan_id": plan.id, "assignments": assignments},
                )
                status_seqs = [
                    self._append(
                        now, author, EventKind.UNIT_STATUS_CHANGED,
                        {"unit_id": a["unit_id"], "availability": Availability.DISPATCHED.value},
                    )
                    for a in assignments
                ]
            finally:
                self._replanning = was_replanning
            return dispatch_seq, status_seqs

    # -- re-planning ---------------------------------------------------------

    def _maybe_replan(self, ev: ContextEvent) -> None:
        if self._replanning or not should_replan(ev):
            return
        with self._lock:
            self._replanning = True
            try:
                self._replan(at=ev.at)
            finally:
                self._replanning = False

    def _replan(self, at: int) -> AssignmentPlan | None:
        """Release dispatched assignments severed by closures, then propose a
        fresh plan that keeps the surviving dispatches pinned."""
        world = self.world()
        active = self._active_dispatches()
        audit: list[str] = []
        if active:
            units = [world.unit(rec.unit_id) for rec in active]
            points = [world.point(rec.point_id) for rec in active]
            units = [u for u in units if u is not None]
            points = {p.id: p for p in points if p is not None}
            matrix = self.routing.build_time_matrix(units, list(points.values()), world.closures)
            for rec in sorted(active, key=lambda r: r.unit_id):
                if rec.point_id not in points:
                    continue
                if matrix.cells.get((rec.unit_id, rec.point_id)) is None:
                    audit.append(f"released {rec.unit_id}: {rec.point_id} became unreachable")
                    self._append(
                        at, SYSTEM_AUTHOR, EventKind.UNIT_STATUS_CHANGED,
                        {"unit_id": rec.unit_id, "availability": Availability.AVAILABLE.value},
                    )
        world = self.world()
        instance = self._build_instance(world, include_dispatched=True)
        if not instance.points:
            return None
        current = AssignmentPlan(
            id="",
            assignments={rec.unit_id: rec.point_id for rec in self._active_dispatches()},
            per_point={},
            score=recommend.ScoreTuple(0, 0, 0),
        )
        plan = recommend.replan(current, instance, plan_id=self._next_plan_id())
        if audit:
            plan = replace(plan, audit=tuple(audit) + plan.audit)
        latest = self.get_plan("latest")
        if latest is not None and latest.assignments == plan.assignments:
            return None
        if not plan.assignments and latest is None:
            return None
        self._append(
            at, SYSTEM_AUTHOR, EventKind.PLAN_PROPOSED, {"plan": plan_to_jsonable(plan)}
        )
        return plan

    # -- synthesis -----------------------------------------------------------

    def build_synthesis(self, seq_from: int, seq_to: int) -> SynthesisReport:
        return build_synthesis(self.log.events, seq_from, seq_to)

    def notifications(self, role: Role, pid: str, from_seq: int = 1) -> list[dict]:
        return notifications_for(self.log.events, role, pid, from_seq)


__all__ = [
    "Accepted",
    "ContextEngine",
    "Registration",
    "Rejected",
    "RoleError",
    "StateError",
    "SynthesisReport",
    "build_synthesis",
    "notifications_for",
    "should_replan",
    "synthesis_to_jsonable",
    "SYSTEM_AUTHOR",
]
