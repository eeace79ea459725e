"""Assignment recommendation: match volunteer units to rescue points.

The objective is lexicographic: maximize priority-weighted covered demand,
then minimize the summed per-point makespan, then minimize total travel
time. Coverage counts plain seats; the greedy solver additionally keeps
assigning until special-needs residual demand is covered by capable
vehicles. One unit serves at most one point (single wave, single trip).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

from .domain import (
    DEFAULT_PRIORITY_WEIGHTS,
    Priority,
    RescuePoint,
    ValidationError,
    VolunteerUnit,
    available_seats,
    _req,
    _req_int,
    _req_str,
)
from .travel import TimeMatrix

# Exhaustive search is exponential; beyond this the greedy solver applies.
EXACT_MAX_UNITS = 10
EXACT_MAX_POINTS = 5


class InvalidPlanError(ValueError):
    """A plan references pairs the instance cannot support."""


class SizeGuardError(ValueError):
    """Instance too large for the exact solver; use solve_greedy."""


class PlanStatus(str, Enum):
    PROPOSED = "proposed"
    DISPATCHED = "dispatched"


@dataclass(frozen=True, order=True)
class ScoreTuple:
    weighted_coverage: int
    total_makespan: int
    total_time: int

    def sort_key(self) -> tuple[int, int, int]:
        """Ascending key: smaller is better."""
        return (-self.weighted_coverage, self.total_makespan, self.total_time)


@dataclass(frozen=True)
class AssignmentInstance:
    points: tuple[RescuePoint, ...]
    units: tuple[VolunteerUnit, ...]
    matrix: TimeMatrix
    weights: dict[Priority, int] = field(default_factory=lambda: dict(DEFAULT_PRIORITY_WEIGHTS))

    def __post_init__(self):
        for u in self.units:
            for p in self.points:
                if (u.id, p.id) not in self.matrix.cells:
                    raise InvalidPlanError(f"matrix missing cell ({u.id}, {p.id})")

    def unit(self, unit_id: str) -> VolunteerUnit:
        for u in self.units:
            if u.id == unit_id:
                return u
        raise KeyError(unit_id)

    def point(self, point_id: str) -> RescuePoint:
        for p in self.points:
            if p.id == point_id:
                return p
        raise KeyError(point_id)


@dataclass(frozen=True)
class PointOutcome:
    covered: int
    shortfall: int
    makespan: int


@dataclass(frozen=True)
class AssignmentPlan:
    id: str
    assignments: dict[str, str]  # unit id -> point id; unassigned units absent
    per_point: dict[str, PointOutcome]
    score: ScoreTuple
    status: PlanStatus = PlanStatus.PROPOSED
    solver: str = ""
    audit: tuple[str, ...] = ()


def effective_people_covered(demand: int, special: int, plain_seats: int, capable_seats: int) -> int:
    """People actually transportable: special-needs riders need capable seats,
    everyone else takes any seat."""
    sp = min(special, capable_seats)
    ns = min(demand - special, plain_seats + (capable_seats - sp))
    return sp + ns


def _seat_split(units: Iterable[VolunteerUnit]) -> tuple[int, int]:
    """(plain seats, capable seats) contributed by the units."""
    plain = capable = 0
    for u in units:
        if u.vehicle.special_needs_capable:
            capable += available_seats(u.vehicle)
        else:
            plain += available_seats(u.vehicle)
    return plain, capable


def compute_plan(
    instance: AssignmentInstance,
    assignments: dict[str, str],
    plan_id: str = "",
    status: PlanStatus = PlanStatus.PROPOSED,
    solver: str = "",
    audit: tuple[str, ...] = (),
) -> AssignmentPlan:
    """Materialize a plan: per-point coverage, shortfall, makespan, and score."""
    per_point: dict[str, PointOutcome] = {}
    wc = tm = tt = 0
    by_point: dict[str, list[str]] = {p.id: [] for p in instance.points}
    for unit_id, point_id in assignments.items():
        if point_id not in by_point:
            raise InvalidPlanError(f"assignment to unknown point {point_id}")
        by_point[point_id].append(unit_id)
    for p in instance.points:
        covered = 0
        makespan = 0
        for unit_id in by_point[p.id]:
            t = instance.matrix.get(unit_id, p.id)
            if t is None:
                raise InvalidPlanError(f"assignment ({unit_id}, {p.id}) is unreachable")
            covered += available_seats(instance.unit(unit_id).vehicle)
            makespan = max(makespan, t)
            tt += t
        per_point[p.id] = PointOutcome(
            covered=covered, shortfall=max(0, p.demand - covered), makespan=makespan
        )
        wc += instance.weights[p.priority] * min(p.demand, covered)
        tm += makespan
    return AssignmentPlan(
        id=plan_id,
        assignments=dict(sorted(assignments.items())),
        per_point=per_point,
        score=ScoreTuple(weighted_coverage=wc, total_makespan=tm, total_time=tt),
        status=status,
        solver=solver,
        audit=audit,
    )


def plan_score(plan: AssignmentPlan, instance: AssignmentInstance) -> ScoreTuple:
    """Recompute the score tuple for a plan against an instance."""
    seen: set[str] = set()
    for unit_id in plan.assignments:
        if unit_id in seen:
            raise InvalidPlanError(f"unit {unit_id} assigned more than once")
        seen.add(unit_id)
    return compute_plan(instance, plan.assignments).score


def _mapping_key(assignments: dict[str, str]) -> tuple[tuple[str, str], ...]:
    return tuple(sorted(assignments.items()))


def solve_greedy(instance: AssignmentInstance, plan_id: str = "") -> AssignmentPlan:
    """Deterministic nearest-first heuristic.

    Points by (priority desc, demand desc, id asc); for each point, take the
    eligible unassigned unit with (smallest travel time, largest seats,
    smallest id) until deliverable coverage meets demand or no unit is left.
    """
    order = sorted(instance.points, key=lambda p: (-p.priority.rank, -p.demand, p.id))
    assignments: dict[str, str] = {}
    for p in order:
        if p.demand <= 0:
            continue
        taken: list[VolunteerUnit] = []
        while True:
            plain, capable = _seat_split(taken)
            if effective_people_covered(p.demand, p.special_needs, plain, capable) >= p.demand:
                break
            candidates = [
                u
                for u in instance.units
                if u.id not in assignments
                and instance.matrix.get(u.id, p.id) is not None
                and available_seats(u.vehicle) >= 1
            ]
            if not candidates:
                break
            best = min(
                candidates,
                key=lambda u: (instance.matrix.get(u.id, p.id), -available_seats(u.vehicle), u.id),
            )
            assignments[best.id] = p.id
            taken.append(best)
    return compute_plan(instance, assignments, plan_id=plan_id, solver="greedy")


def solve_exact(instance: AssignmentInstance, plan_id: str = "") -> AssignmentPlan:
    """Optimal plan under the lexicographic score, by exhaustive search with
    pruning. Ties break toward the lexicographically smallest sorted
    (unit id -> point id) mapping."""
    units = sorted(instance.units, key=lambda u: u.id)
    points = sorted(instance.points, key=lambda p: p.id)
    if len(units) > EXACT_MAX_UNITS or len(points) > EXACT_MAX_POINTS:
        raise SizeGuardError(
            f"instance {len(units)} units x {len(points)} points exceeds the "
            f"{EXACT_MAX_UNITS}x{EXACT_MAX_POINTS} exact-solver guard; use solve_greedy"
        )

    n, m = len(units), len(points)
    seats = [available_seats(u.vehicle) for u in units]
    weights = [instance.weights[p.priority] for p in points]
    demands = [p.demand for p in points]
    cell = [[instance.matrix.get(u.id, p.id) for p in points] for u in units]

    # Admissible coverage bound per remaining unit: seats x best reachable weight.
    unit_potential = [
        max((weights[j] for j in range(m) if cell[i][j] is not None), default=0) * seats[i]
        for i in range(n)
    ]
    suffix_potential = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix_potential[i] = suffix_potential[i + 1] + unit_potential[i]

    # Seed with greedy so pruning starts from a feasible incumbent.
    seed = solve_greedy(instance)
    best_key: list[Any] = [list(seed.score.sort_key()) + [_mapping_key(seed.assignments)]][0]
    best_assignments = dict(seed.assignments)

    covered = [0] * m
    makespan = [0] * m
    choice: list[int | None] = [None] * n
    state = {"time": 0}

    def capped_coverage() -> int:
        return sum(weights[j] * min(demands[j], covered[j]) for j in range(m))

    def descend(i: int) -> None:
        nonlocal best_key, best_assignments
        current_wc = capped_coverage()
        ub = current_wc + suffix_potential[i]
        if ub < -best_key[0]:
            return
        if ub == -best_key[0]:
            # Coverage can at best tie: partial makespan/time only grow.
            partial_tm = sum(makespan)
            if partial_tm > best_key[1]:
                return
            if partial_tm == best_key[1] and state["time"] > best_key[2]:
                return
        if i == n:
            tm = sum(makespan)
            assignments = {
                units[k].id: points[choice[k]].id for k in range(n) if choice[k] is not None
            }
            key = [-current_wc, tm, state["time"], _mapping_key(assignments)]
            if key < best_key:
                best_key = key
                best_assignments = assignments
            return
        for j in range(m):
            t = cell[i][j]
            if t is None:
                continue
            prev_makespan = makespan[j]
            covered[j] += seats[i]
            makespan[j] = max(makespan[j], t)
            state["time"] += t
            choice[i] = j
            descend(i + 1)
            choice[i] = None
            state["time"] -= t
            makespan[j] = prev_makespan
            covered[j] -= seats[i]
        descend(i + 1)  # leave unit i unassigned

    descend(0)
    return compute_plan(instance, best_assignments, plan_id=plan_id, solver="exact")


def solve(instance: AssignmentInstance, plan_id: str = "") -> AssignmentPlan:
    """Exact within the size guard, greedy beyond it."""
    if len(instance.units) <= EXACT_MAX_UNITS and len(instance.points) <= EXACT_MAX_POINTS:
        return solve_exact(instance, plan_id=plan_id)
    return solve_greedy(instance, plan_id=plan_id)


def rank_units(
    point_id: str, instance: AssignmentInstance, k: int
) -> list[tuple[str, int, int]]:
    """Top-k units for a point as (unit id, travel seconds, seats), nearest
    first; unreachable units excluded."""
    instance.point(point_id)
    reachable = [
        (u.id, instance.matrix.get(u.id, point_id), available_seats(u.vehicle))
        for u in instance.units
        if instance.matrix.get(u.id, point_id) is not None
    ]
    reachable.sort(key=lambda r: (r[1], -r[2], r[0]))
    return reachable[: max(0, k)]


def replan(
    current: AssignmentPlan, instance: AssignmentInstance, plan_id: str = ""
) -> AssignmentPlan:
    """Re-solve around dispatched assignments.

    Dispatched assignments whose cell is still finite are kept verbatim;
    dispatched assignments that became unreachable are released and flagged
    in the audit list. Free units are then solved greedily against the
    instance demands, which the caller supplies already net of what the
    pinned dispatches will deliver (an event-sourced world decrements demand
    when a dispatch commits).
    """
    unit_avail = {u.id: u.availability.value for u in instance.units}
    pins: dict[str, str] = {}
    audit: list[str] = []
    for unit_id, point_id in sorted(current.assignments.items()):
        if unit_avail.get(unit_id) != "dispatched":
            continue
        if instance.matrix.cells.get((unit_id, point_id)) is not None:
            pins[unit_id] = point_id
        else:
            audit.append(f"released {unit_id}: {point_id} became unreachable")

    free_units = tuple(u for u in instance.units if u.id not in pins)
    fill_points = tuple(p for p in instance.points if p.demand > 0)
    residual = AssignmentInstance(
        points=fill_points,
        units=free_units,
        matrix=_restrict_matrix(instance.matrix, free_units, fill_points),
        weights=instance.weights,
    )
    fill = solve_greedy(residual)
    assignments = dict(pins)
    assignments.update(fill.assignments)
    return compute_plan(
        instance,
        assignments,
        plan_id=plan_id,
        solver="replan",
        audit=tuple(audit),
    )


def _restrict_matrix(
    matrix: TimeMatrix, units: Sequence[VolunteerUnit], points: Sequence[RescuePoint]
) -> TimeMatrix:
    return TimeMatrix(
        unit_ids=tuple(u.id for u in units),
        point_ids=tuple(p.id for p in points),
        cells={(u.id, p.id): matrix.cells[(u.id, p.id)] for u in units for p in points},
        degraded=matrix.degraded,
    )


# ---------------------------------------------------------------------------
# Canonical JSON


def plan_to_jsonable(plan: AssignmentPlan) -> dict:
    return {
        "id": plan.id,
        "assignments": dict(sorted(plan.assignments.items())),
        "per_point": {
            pid: {"covered": o.covered, "shortfall": o.shortfall, "makespan": o.makespan}
            for pid, o in sorted(plan.per_point.items())
        },
        "score": {
            "weighted_coverage": plan.score.weighted_coverage,
            "total_makespan": plan.score.total_makespan,
            "total_time": plan.score.total_time,
        },
        "status": plan.status.value,
        "solver": plan.solver,
        "audit": list(plan.audit),
    }


def parse_plan(obj: Any, ctx: str = "plan") -> AssignmentPlan:
    assignments_raw = _req(obj, "assignments", ctx)
    if not isinstance(assignments_raw, dict):
        raise ValidationError(f"{ctx}.assignments: expected object")
    score_raw = _req(obj, "score", ctx)
    per_point_raw = obj.get("per_point", {})
    per_point = {
        pid: PointOutcome(
            covered=_req_int(o, "covered", f"{ctx}.per_point.{pid}", minimum=0),
            shortfall=_req_int(o, "shortfall", f"{ctx}.per_point.{pid}", minimum=0),
            makespan=_req_int(o, "makespan", f"{ctx}.per_point.{pid}", minimum=0),
        )
        for pid, o in per_point_raw.items()
    }
    status_raw = obj.get("status", "proposed")
    if status_raw not in ("proposed", "dispatched"):
        raise ValidationError(f"{ctx}.status: unknown status {status_raw!r}")
    return AssignmentPlan(
        id=_req_str(obj, "id", ctx),
        assignments={str(k): str(v) for k, v in sorted(assignments_raw.items())},
        per_point=per_point,
        score=ScoreTuple(
            weighted_coverage=_req_int(score_raw, "weighted_coverage", f"{ctx}.score"),
            total_makespan=_req_int(score_raw, "total_makespan", f"{ctx}.score"),
            total_time=_req_int(score_raw, "total_time", f"{ctx}.score"),
        ),
        status=PlanStatus(status_raw),
        solver=str(obj.get("solver", "")),
        audit=tuple(obj.get("audit", [])),
    )
