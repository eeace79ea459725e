"""Crisis-domain types and the pure value computations shared by every layer.

Everything here is an immutable value: entities are frozen dataclasses,
operations are pure functions, and the canonical JSON form defined at the
bottom is the single serialization contract used by scenario files, the
event log, and the HTTP API.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import total_ordering
from math import isfinite
from typing import Any, Iterable

EARTH_RADIUS_KM = 6371.0


class ValidationError(ValueError):
    """Raised when external data fails schema or invariant checks."""


class TransportMode(str, Enum):
    ROAD = "road"
    WATER = "water"


@total_ordering
class Priority(Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def rank(self) -> int:
        return _PRIORITY_RANK[self]

    def __lt__(self, other: "Priority") -> bool:
        if not isinstance(other, Priority):
            return NotImplemented
        return self.rank < other.rank


_PRIORITY_RANK = {Priority.LOW: 0, Priority.MEDIUM: 1, Priority.HIGH: 2}

# One High point outweighs one Medium plus one Low; overridable per scenario.
DEFAULT_PRIORITY_WEIGHTS = {Priority.LOW: 1, Priority.MEDIUM: 2, Priority.HIGH: 4}


class PointStatus(str, Enum):
    OPEN = "open"
    EVACUATING = "evacuating"
    CLEARED = "cleared"


class Qualification(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"


class Availability(str, Enum):
    AVAILABLE = "available"
    ASSIGNED = "assigned"
    DISPATCHED = "dispatched"
    UNAVAILABLE = "unavailable"


class Role(str, Enum):
    DECISION_MAKER = "decision_maker"
    DRIVER = "driver"
    AFFECTED = "affected"
    SYSTEM = "system"


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def in_range(self) -> bool:
        return (
            isfinite(self.lat)
            and isfinite(self.lon)
            and -90.0 <= self.lat <= 90.0
            and -180.0 <= self.lon <= 180.0
        )


@dataclass(frozen=True)
class Vehicle:
    id: str
    mode: TransportMode
    capacity: int  # total seats including the driver
    special_needs_capable: bool = False


@dataclass(frozen=True)
class VolunteerUnit:
    """A registered citizen-volunteer driver paired with exactly one vehicle."""

    id: str
    driver_name: str
    location: GeoPoint
    vehicle: Vehicle
    qualification: Qualification = Qualification.PENDING
    availability: Availability = Availability.AVAILABLE
    attributes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RescuePoint:
    """An impacted location where people await evacuation."""

    id: str
    location: GeoPoint
    demand: int
    special_needs: int
    priority: Priority
    accessible_modes: frozenset[TransportMode]
    status: PointStatus = PointStatus.OPEN
    attributes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Shelter:
    id: str
    location: GeoPoint
    capacity: int
    occupancy: int = 0
    attributes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RoadClosure:
    """Blocks travel between two circular regions for one transport mode.

    A (origin, destination) pair is blocked, in either direction, when one
    endpoint falls inside region a and the other inside region b.
    """

    id: str
    a: GeoPoint
    a_radius_km: float
    b: GeoPoint
    b_radius_km: float
    mode: TransportMode


@dataclass(frozen=True)
class WorldState:
    """Aggregate of everything the platform knows at one scenario instant.

    Collections are tuples in insertion order; duplicate ids are
    representable (and reported by validate_world) but never produced by
    the event-sourced transitions.
    """

    rescue_points: tuple[RescuePoint, ...] = ()
    units: tuple[VolunteerUnit, ...] = ()
    shelters: tuple[Shelter, ...] = ()
    closures: tuple[RoadClosure, ...] = ()
    clock: int = 0

    def point(self, point_id: str) -> RescuePoint | None:
        for p in self.rescue_points:
            if p.id == point_id:
                return p
        return None

    def unit(self, unit_id: str) -> VolunteerUnit | None:
        for u in self.units:
            if u.id == unit_id:
                return u
        return None

    def shelter(self, shelter_id: str) -> Shelter | None:
        for s in self.shelters:
            if s.id == shelter_id:
                return s
        return None

    def closure(self, closure_id: str) -> RoadClosure | None:
        for c in self.closures:
            if c.id == closure_id:
                return c
        return None

    def with_point(self, point: RescuePoint) -> "WorldState":
        return replace(
            self,
            rescue_points=tuple(point if p.id == point.id else p for p in self.rescue_points),
        )

    def with_unit(self, unit: VolunteerUnit) -> "WorldState":
        return replace(
            self,
            units=tuple(unit if u.id == unit.id else u for u in self.units),
        )

    def add_unit(self, unit: VolunteerUnit) -> "WorldState":
        return replace(self, units=self.units + (unit,))

    def add_closure(self, closure: RoadClosure) -> "WorldState":
        return replace(self, closures=self.closures + (closure,))

    def remove_closure(self, closure_id: str) -> "WorldState":
        return replace(self, closures=tuple(c for c in self.closures if c.id != closure_id))

    def with_clock(self, at: int) -> "WorldState":
        return replace(self, clock=max(self.clock, at))


# ---------------------------------------------------------------------------
# Operations


def available_seats(vehicle: Vehicle) -> int:
    """Seats a vehicle contributes to evacuation: everything but the driver's."""
    return vehicle.capacity - 1


def priority_weight(p: Priority, weights: dict[Priority, int] | None = None) -> int:
    """Coverage weight of a priority level (Low 1, Medium 2, High 4 by default)."""
    return (weights or DEFAULT_PRIORITY_WEIGHTS)[p]


@dataclass(frozen=True)
class Violation:
    entity_id: str
    message: str

    def __str__(self) -> str:
        return f"{self.entity_id}: {self.message}"


def validate_world(w: WorldState) -> list[Violation]:
    """Check every domain invariant; violations are data, not failures."""
    out: list[Violation] = []

    def dup_check(label: str, ids: Iterable[str]) -> None:
        seen: set[str] = set()
        for i in ids:
            if i in seen:
                out.append(Violation(i, f"duplicate {label} id"))
            seen.add(i)

    dup_check("rescue point", (p.id for p in w.rescue_points))
    dup_check("unit", (u.id for u in w.units))
    dup_check("shelter", (s.id for s in w.shelters))
    dup_check("closure", (c.id for c in w.closures))

    for p in w.rescue_points:
        if not p.location.in_range():
            out.append(Violation(p.id, "location out of range"))
        if p.demand < 0:
            out.append(Violation(p.id, "negative demand"))
        if p.special_needs < 0:
            out.append(Violation(p.id, "negative special_needs"))
        if p.special_needs > p.demand:
            out.append(Violation(p.id, "special_needs exceeds demand"))
        if p.status is PointStatus.CLEARED and p.demand != 0:
            out.append(Violation(p.id, "cleared point with nonzero demand"))
        if not p.accessible_modes:
            out.append(Violation(p.id, "no accessible transport modes"))

    for u in w.units:
        if not u.location.in_range():
            out.append(Violation(u.id, "location out of range"))
        if u.vehicle.capacity < 1:
            out.append(Violation(u.id, "vehicle capacity below 1"))
        if (
            u.availability in (Availability.ASSIGNED, Availability.DISPATCHED)
            and u.qualification is not Qualification.APPROVED
        ):
            out.append(Violation(u.id, "non-approved unit assigned or dispatched"))

    for s in w.shelters:
        if not s.location.in_range():
            out.append(Violation(s.id, "location out of range"))
        if s.capacity < 0:
            out.append(Violation(s.id, "negative capacity"))
        if s.occupancy < 0:
            out.append(Violation(s.id, "negative occupancy"))
        if s.occupancy > s.capacity:
            out.append(Violation(s.id, "occupancy exceeds capacity"))

    for c in w.closures:
        if not c.a.in_range() or not c.b.in_range():
            out.append(Violation(c.id, "closure region out of range"))
        if c.a_radius_km < 0 or c.b_radius_km < 0:
            out.append(Violation(c.id, "negative closure radius"))

    if w.clock < 0:
        out.append(Violation("world", "negative clock"))
    return out


# ---------------------------------------------------------------------------
# Canonical JSON serialization (snake_case field names, sorted keys)


def canonical_dumps(obj: Any) -> str:
    """The one canonical JSON encoding: sorted keys, no whitespace, ASCII."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def geopoint_to_jsonable(g: GeoPoint) -> dict:
    return {"lat": g.lat, "lon": g.lon}


def vehicle_to_jsonable(v: Vehicle) -> dict:
    return {
        "id": v.id,
        "mode": v.mode.value,
        "capacity": v.capacity,
        "special_needs_capable": v.special_needs_capable,
    }


def unit_to_jsonable(u: VolunteerUnit) -> dict:
    out = {
        "id": u.id,
        "driver_name": u.driver_name,
        "location": geopoint_to_jsonable(u.location),
        "vehicle": vehicle_to_jsonable(u.vehicle),
        "qualification": u.qualification.value,
        "availability": u.availability.value,
    }
    if u.attributes:
        out["attributes"] = u.attributes
    return out


def point_to_jsonable(p: RescuePoint) -> dict:
    out = {
        "id": p.id,
        "location": geopoint_to_jsonable(p.location),
        "demand": p.demand,
        "special_needs": p.special_needs,
        "priority": p.priority.value,
        "accessible_modes": sorted(m.value for m in p.accessible_modes),
        "status": p.status.value,
    }
    if p.attributes:
        out["attributes"] = p.attributes
    return out


def shelter_to_jsonable(s: Shelter) -> dict:
    out = {
        "id": s.id,
        "location": geopoint_to_jsonable(s.location),
        "capacity": s.capacity,
        "occupancy": s.occupancy,
    }
    if s.attributes:
        out["attributes"] = s.attributes
    return out


def closure_to_jsonable(c: RoadClosure) -> dict:
    return {
        "id": c.id,
        "a": geopoint_to_jsonable(c.a),
        "a_radius_km": c.a_radius_km,
        "b": geopoint_to_jsonable(c.b),
        "b_radius_km": c.b_radius_km,
        "mode": c.mode.value,
    }


def world_to_jsonable(w: WorldState) -> dict:
    return {
        "rescue_points": [point_to_jsonable(p) for p in sorted(w.rescue_points, key=lambda p: p.id)],
        "units": [unit_to_jsonable(u) for u in sorted(w.units, key=lambda u: u.id)],
        "shelters": [shelter_to_jsonable(s) for s in sorted(w.shelters, key=lambda s: s.id)],
        "closures": [closure_to_jsonable(c) for c in sorted(w.closures, key=lambda c: c.id)],
        "clock": w.clock,
    }


def world_digest(w: WorldState) -> str:
    """Stable content hash of a world; equal worlds hash identically."""
    return hashlib.sha256(canonical_dumps(world_to_jsonable(w)).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Parsers: strict on field types and ranges, used at every trust boundary


def _req(obj: dict, key: str, ctx: str) -> Any:
    if not isinstance(obj, dict):
        raise ValidationError(f"{ctx}: expected object")
    if key not in obj:
        raise ValidationError(f"{ctx}: missing field '{key}'")
    return obj[key]


def _req_str(obj: dict, key: str, ctx: str) -> str:
    v = _req(obj, key, ctx)
    if not isinstance(v, str) or not v:
        raise ValidationError(f"{ctx}: field '{key}' must be a non-empty string")
    return v


def _req_int(obj: dict, key: str, ctx: str, minimum: int | None = None) -> int:
    v = _req(obj, key, ctx)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{ctx}: field '{key}' must be an integer")
    if minimum is not None and v < minimum:
        raise ValidationError(f"{ctx}: field '{key}' must be >= {minimum}")
    return v


def _req_num(obj: dict, key: str, ctx: str) -> float:
    v = _req(obj, key, ctx)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{ctx}: field '{key}' must be a number")
    return float(v)


def _enum(cls, raw: Any, ctx: str):
    try:
        return cls(raw)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise ValidationError(f"{ctx}: expected one of [{allowed}], got {raw!r}") from None


def parse_geopoint(obj: Any, ctx: str = "location") -> GeoPoint:
    g = GeoPoint(lat=_req_num(obj, "lat", ctx), lon=_req_num(obj, "lon", ctx))
    if not g.in_range():
        raise ValidationError(f"{ctx}: coordinates out of range ({g.lat}, {g.lon})")
    return g


def parse_vehicle(obj: Any, ctx: str = "vehicle") -> Vehicle:
    return Vehicle(
        id=_req_str(obj, "id", ctx),
        mode=_enum(TransportMode, _req(obj, "mode", ctx), f"{ctx}.mode"),
        capacity=_req_int(obj, "capacity", ctx, minimum=1),
        special_needs_capable=bool(obj.get("special_needs_capable", False)),
    )


def parse_unit(obj: Any, ctx: str = "unit") -> VolunteerUnit:
    return VolunteerUnit(
        id=_req_str(obj, "id", ctx),
        driver_name=_req_str(obj, "driver_name", ctx),
        location=parse_geopoint(_req(obj, "location", ctx), f"{ctx}.location"),
        vehicle=parse_vehicle(_req(obj, "vehicle", ctx), f"{ctx}.vehicle"),
        qualification=_enum(Qualification, obj.get("qualification", "pending"), f"{ctx}.qualification"),
        availability=_enum(Availability, obj.get("availability", "available"), f"{ctx}.availability"),
        attributes=dict(obj.get("attributes", {})),
    )


def parse_point(obj: Any, ctx: str = "rescue_point") -> RescuePoint:
    demand = _req_int(obj, "demand", ctx, minimum=0)
    special = _req_int(obj, "special_needs", ctx, minimum=0)
    if special > demand:
        raise ValidationError(f"{ctx}: special_needs exceeds demand")
    modes_raw = _req(obj, "accessible_modes", ctx)
    if not isinstance(modes_raw, list) or not modes_raw:
        raise ValidationError(f"{ctx}: accessible_modes must be a non-empty list")
    return RescuePoint(
        id=_req_str(obj, "id", ctx),
        location=parse_geopoint(_req(obj, "location", ctx), f"{ctx}.location"),
        demand=demand,
        special_needs=special,
        priority=_enum(Priority, _req(obj, "priority", ctx), f"{ctx}.priority"),
        accessible_modes=frozenset(_enum(TransportMode, m, f"{ctx}.accessible_modes") for m in modes_raw),
        status=_enum(PointStatus, obj.get("status", "open"), f"{ctx}.status"),
        attributes=dict(obj.get("attributes", {})),
    )


def parse_shelter(obj: Any, ctx: str = "shelter") -> Shelter:
    capacity = _req_int(obj, "capacity", ctx, minimum=0)
    occupancy = _req_int(obj, "occupancy", ctx, minimum=0) if "occupancy" in obj else 0
    if occupancy > capacity:
        raise ValidationError(f"{ctx}: occupancy exceeds capacity")
    return Shelter(
        id=_req_str(obj, "id", ctx),
        location=parse_geopoint(_req(obj, "location", ctx), f"{ctx}.location"),
        capacity=capacity,
        occupancy=occupancy,
        attributes=dict(obj.get("attributes", {})),
    )


def parse_closure(obj: Any, ctx: str = "closure") -> RoadClosure:
    a_r = _req_num(obj, "a_radius_km", ctx)
    b_r = _req_num(obj, "b_radius_km", ctx)
    if a_r < 0 or b_r < 0:
        raise ValidationError(f"{ctx}: closure radius must be non-negative")
    return RoadClosure(
        id=_req_str(obj, "id", ctx),
        a=parse_geopoint(_req(obj, "a", ctx), f"{ctx}.a"),
        a_radius_km=a_r,
        b=parse_geopoint(_req(obj, "b", ctx), f"{ctx}.b"),
        b_radius_km=b_r,
        mode=_enum(TransportMode, _req(obj, "mode", ctx), f"{ctx}.mode"),
    )


def parse_world(obj: Any, ctx: str = "world") -> WorldState:
    if not isinstance(obj, dict):
        raise ValidationError(f"{ctx}: expected object")
    w = WorldState(
        rescue_points=tuple(
            parse_point(p, f"{ctx}.rescue_points[{i}]") for i, p in enumerate(obj.get("rescue_points", []))
        ),
        units=tuple(parse_unit(u, f"{ctx}.units[{i}]") for i, u in enumerate(obj.get("units", []))),
        shelters=tuple(parse_shelter(s, f"{ctx}.shelters[{i}]") for i, s in enumerate(obj.get("shelters", []))),
        closures=tuple(parse_closure(c, f"{ctx}.closures[{i}]") for i, c in enumerate(obj.get("closures", []))),
        clock=_req_int(obj, "clock", ctx, minimum=0) if "clock" in obj else 0,
    )
    return w
