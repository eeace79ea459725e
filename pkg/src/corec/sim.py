"""Deterministic scenario runner: replays a scripted crisis against the full
stack with the offline routing provider and reports evacuation metrics.

A scenario is a JSON file (schema 1) holding an initial world, a participant
roster, optional config overrides, and an ordered script of timed actions.
Runs are pure functions of the file content: identical logs byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .config import parse_routing, parse_weights
from .domain import (
    DEFAULT_PRIORITY_WEIGHTS,
    PointStatus,
    Priority,
    Role,
    ValidationError,
    WorldState,
    canonical_dumps,
    parse_world,
    world_digest,
    _enum,
    _req,
    _req_int,
    _req_str,
)
from .engine import ContextEngine, Rejected, RoleError, StateError
from .store import ContextEvent, EventLog, replay
from .travel import RoutingProviderConfig, TravelTimeService

SCHEMA_VERSION = 1

ACTIONS = frozenset(
    {
        "register",
        "vet",
        "report",
        "update_demand",
        "propose",
        "dispatch",
        "unit_status",
        "clear",
        "feedback",
        "bulletin",
    }
)


@dataclass(frozen=True)
class Scenario:
    name: str
    initial: WorldState
    participants: dict[str, Role]
    script: tuple[dict, ...]
    routing: RoutingProviderConfig = field(default_factory=RoutingProviderConfig)
    weights: dict[Priority, int] = field(default_factory=lambda: dict(DEFAULT_PRIORITY_WEIGHTS))
    rng_seed: int = 0


@dataclass(frozen=True)
class RunMetrics:
    coverage_pct: dict[str, float | None]
    people_evacuated: int
    mean_response_s: float | None
    max_response_s: int | None
    shortfall: dict[str, int]
    events_processed: int
    points_cleared: int
    units_dispatched: int


@dataclass(frozen=True)
class RunResult:
    events: tuple[ContextEvent, ...]
    metrics: RunMetrics
    world: WorldState
    audit: tuple[str, ...]

    def world_digest(self) -> str:
        return world_digest(self.world)


def metrics_to_jsonable(m: RunMetrics) -> dict:
    return {
        "coverage_pct": {k: m.coverage_pct[k] for k in ("low", "medium", "high")},
        "people_evacuated": m.people_evacuated,
        "mean_response_s": m.mean_response_s,
        "max_response_s": m.max_response_s,
        "shortfall": dict(sorted(m.shortfall.items())),
        "events_processed": m.events_processed,
        "points_cleared": m.points_cleared,
        "units_dispatched": m.units_dispatched,
    }


# ---------------------------------------------------------------------------
# Loading and validation


def _action_ctx(i: int, action: dict) -> str:
    return f"script[{i}] ({action.get('action', '?')})"


def load_scenario(path: str | Path) -> Scenario:
    """Parse and statically validate a scenario file. Violations name the
    script index and field that caused them."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"scenario: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scenario: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_scenario(raw)


def parse_scenario(raw: Any) -> Scenario:
    if not isinstance(raw, dict):
        raise ValidationError("scenario: expected a JSON object")
    if raw.get("schema") != SCHEMA_VERSION:
        raise ValidationError(f"scenario: schema must be {SCHEMA_VERSION}")
    name = _req_str(raw, "name", "scenario")
    initial = parse_world(raw.get("initial") or {}, "scenario.initial")
    participants: dict[str, Role] = {}
    for i, p in enumerate(raw.get("participants") or []):
        ctx = f"scenario.participants[{i}]"
        pid = _req_str(p, "id", ctx)
        role = _enum(Role, _req(p, "role", ctx), f"{ctx}.role")
        if role is Role.SYSTEM:
            raise ValidationError(f"{ctx}: the system role cannot be provisioned")
        if pid in participants:
            raise ValidationError(f"{ctx}: duplicate participant id {pid}")
        participants[pid] = role
    config = raw.get("config") or {}
    routing = parse_routing(config.get("routing") or {})
    weights = parse_weights(config.get("weights") or {})
    rng_seed = raw.get("rng_seed", 0)
    if not isinstance(rng_seed, int) or isinstance(rng_seed, bool):
        raise ValidationError("scenario: rng_seed must be an integer")
    script_raw = raw.get("script") or []
    if not isinstance(script_raw, list):
        raise ValidationError("scenario.script: expected a list")
    script = _validate_script(script_raw, initial, participants)
    return Scenario(
        name=name,
        initial=initial,
        participants=participants,
        script=script,
        routing=routing,
        weights=weights,
        rng_seed=rng_seed,
    )


def _validate_script(
    script_raw: list, initial: WorldState, participants: dict[str, Role]
) -> tuple[dict, ...]:
    known_points = {p.id for p in initial.rescue_points}
    known_units = {u.id for u in initial.units}
    known_closures = {c.id for c in initial.closures}
    known_authors = set(participants) | known_units
    last_at = 0
    script: list[dict] = []
    for i, action in enumerate(script_raw):
        if not isinstance(action, dict):
            raise ValidationError(f"script[{i}]: expected object")
        ctx = _action_ctx(i, action)
        kind = _req_str(action, "action", ctx)
        if kind not in ACTIONS:
            raise ValidationError(f"{ctx}: unknown action {kind!r}")
        at = _req_int(action, "at", ctx, minimum=0)
        if at < last_at:
            raise ValidationError(f"{ctx}: 'at' {at} goes backwards (previous {last_at})")
        last_at = at

        def need_author() -> str:
            author = _req_str(action, "author", ctx)
            if author not in known_authors:
                raise ValidationError(f"{ctx}: unknown author {author}")
            return author

        if kind == "register":
            unit_id = action.get("id")
            if unit_id is not None:
                if not isinstance(unit_id, str) or not unit_id:
                    raise ValidationError(f"{ctx}: 'id' must be a non-empty string")
                if unit_id in known_units:
                    raise ValidationError(f"{ctx}: duplicate unit id {unit_id}")
                known_units.add(unit_id)
                known_authors.add(unit_id)
            _req_str(action, "driver_name", ctx)
            _req_str(action, "contact", ctx)
            _req(action, "location", ctx)
            _req(action, "vehicle", ctx)
        elif kind == "vet":
            need_author()
            reg = _req_str(action, "registration_id", ctx)
            if reg not in known_units:
                raise ValidationError(f"{ctx}: unknown registration {reg}")
            verdict = _req_str(action, "verdict", ctx)
            if verdict not in ("approved", "rejected"):
                raise ValidationError(f"{ctx}: verdict must be 'approved' or 'rejected'")
        elif kind == "report":
            need_author()
            claim = _req(action, "claim", ctx)
            if not isinstance(claim, dict):
                raise ValidationError(f"{ctx}: 'claim' must be an object")
            claim_type = claim.get("type")
            if claim_type in ("demand_update", "need_note"):
                pid = claim.get("point_id")
                if pid not in known_points:
                    raise ValidationError(f"{ctx}: unknown point {pid}")
            elif claim_type == "closure":
                closure = claim.get("closure")
                if not isinstance(closure, dict) or not closure.get("id"):
                    raise ValidationError(f"{ctx}: closure claim needs a closure object with id")
                if closure["id"] in known_closures:
                    raise ValidationError(f"{ctx}: duplicate closure id {closure['id']}")
                known_closures.add(closure["id"])
            elif claim_type == "reopening":
                cid = claim.get("closure_id")
                if cid not in known_closures:
                    raise ValidationError(f"{ctx}: unknown closure {cid}")
            else:
                raise ValidationError(f"{ctx}: unknown claim type {claim_type!r}")
        elif kind == "update_demand":
            need_author()
            pid = _req_str(action, "point_id", ctx)
            if pid not in known_points:
                raise ValidationError(f"{ctx}: unknown point {pid}")
            _req_int(action, "demand", ctx, minimum=0)
        elif kind == "propose":
            need_author()
            for pid in action.get("point_ids") or []:
                if pid not in known_points:
                    raise ValidationError(f"{ctx}: unknown point {pid}")
        elif kind == "dispatch":
            need_author()
            unit_ids = action.get("unit_ids")
            if unit_ids is not None:
                for uid in unit_ids:
                    if uid not in known_units:
                        raise ValidationError(f"{ctx}: unknown unit {uid}")
            if "only_available" in action and not isinstance(action["only_available"], bool):
                raise ValidationError(f"{ctx}: 'only_available' must be a boolean")
        elif kind == "unit_status":
            need_author()
            uid = _req_str(action, "unit_id", ctx)
            if uid not in known_units:
                raise ValidationError(f"{ctx}: unknown unit {uid}")
            _req_str(action, "availability", ctx)
        elif kind == "clear":
            need_author()
            pid = _req_str(action, "point_id", ctx)
            if pid not in known_points:
                raise ValidationError(f"{ctx}: unknown point {pid}")
        elif kind == "feedback":
            need_author()
            _req_int(action, "rating", ctx)
        elif kind == "bulletin":
            if action.get("author") is not None:
                need_author()
            _req_str(action, "text", ctx)
        script.append(action)
    return tuple(script)


# ---------------------------------------------------------------------------
# Execution


def run(scenario: Scenario, log_path: str | Path | None = None) -> RunResult:
    """Execute the script in order against a fresh engine. Actions the engine
    rejects are recorded in the audit and the run continues."""
    engine = ContextEngine(
        scenario.initial,
        log=EventLog(log_path),
        participants=dict(scenario.participants),
        routing=TravelTimeService(scenario.routing),
        weights=scenario.weights,
        clock=lambda: 0,
    )
    audit: list[str] = []
    for i, action in enumerate(scenario.script):
        kind = action["action"]
        at = action["at"]
        try:
            if kind == "register":
                application = {
                    "driver_name": action["driver_name"],
                    "contact": action["contact"],
                    "location": action["location"],
                    "vehicle": action["vehicle"],
                }
                if action.get("id"):
                    application["id"] = action["id"]
                engine.register_driver(application, at=at)
            elif kind == "vet":
                engine.vet_registration(
                    action["author"], action["registration_id"], action["verdict"], at=at
                )
            elif kind == "report":
                result = engine.submit_report(action["author"], action["claim"], at=at)
                if isinstance(result, Rejected):
                    audit.append(f"script[{i}]: report rejected ({result.reason})")
            elif kind == "update_demand":
                engine.update_demand(
                    action["author"],
                    action["point_id"],
                    action["demand"],
                    action.get("special_needs", 0),
                    action.get("priority"),
                    at=at,
                )
            elif kind == "propose":
                engine.propose_plan(action["author"], point_ids=action.get("point_ids"), at=at)
            elif kind == "dispatch":
                plan_id = action.get("plan_id", "latest")
                unit_ids = action.get("unit_ids")
                if action.get("only_available") and unit_ids is None:
                    plan = engine.get_plan(plan_id)
                    world = engine.world()
                    unit_ids = [
                        uid
                        for uid in sorted(plan.assignments)
                        if (unit := world.unit(uid)) is not None
                        and unit.availability.value == "available"
                    ] if plan else []
                    if not unit_ids:
                        audit.append(f"script[{i}]: dispatch skipped, no available units")
                        continue
                engine.dispatch(action["author"], plan_id, unit_ids, at=at)
            elif kind == "unit_status":
                engine.set_unit_status(
                    action["author"], action["unit_id"], action["availability"], at=at
                )
            elif kind == "clear":
                engine.clear_point(action["author"], action["point_id"], at=at)
            elif kind == "feedback":
                result = engine.submit_feedback(
                    action["author"], action["rating"], action.get("text", ""), at=at
                )
                if isinstance(result, Rejected):
                    audit.append(f"script[{i}]: feedback rejected ({result.reason})")
            elif kind == "bulletin":
                engine.publish_bulletin(action.get("author"), action["text"], at=at)
        except (ValidationError, RoleError, StateError) as exc:
            audit.append(f"script[{i}] ({kind}): {exc}")
    events = engine.log.events
    return RunResult(
        events=events,
        metrics=emit_metrics(scenario.initial, events),
        world=engine.world(),
        audit=tuple(audit),
    )


def emit_metrics(initial: WorldState, events: Sequence[ContextEvent]) -> RunMetrics:
    """Evacuation metrics recomputed from the log: coverage per priority at
    each point's final reported demand, people moved by unreleased
    dispatches, and response-time statistics."""
    res = replay(initial, tuple(events))
    rejected = res.rejected_seqs()

    final_demand = {p.id: p.demand for p in initial.rescue_points}
    priority = {p.id: p.priority for p in initial.rescue_points}
    for ev in events:
        if ev.seq in rejected:
            continue
        if ev.kind.value == "point_reported" and ev.payload.get("claim", {}).get("type") == "demand_update":
            final_demand[ev.payload["point_id"]] = ev.payload["claim"]["demand"]
        elif ev.kind.value == "demand_updated":
            final_demand[ev.payload["point_id"]] = ev.payload["demand"]
            if "priority" in ev.payload:
                priority[ev.payload["point_id"]] = Priority(ev.payload["priority"])

    evacuated: dict[str, int] = {p.id: 0 for p in initial.rescue_points}
    travel_times: list[int] = []
    for rec in res.dispatches:
        if rec.released_seq is not None:
            continue
        evacuated[rec.point_id] = evacuated.get(rec.point_id, 0) + rec.people
        travel_times.append(rec.travel_time_s)

    coverage: dict[str, float | None] = {}
    for level in Priority:
        demanded = sum(d for pid, d in final_demand.items() if priority[pid] is level and d > 0)
        if demanded == 0:
            coverage[level.value] = None
        else:
            moved = sum(
                min(evacuated.get(pid, 0), d)
                for pid, d in final_demand.items()
                if priority[pid] is level and d > 0
            )
            coverage[level.value] = round(100.0 * moved / demanded, 2)

    shortfall = {
        pid: max(0, d - evacuated.get(pid, 0)) for pid, d in final_demand.items() if d > 0
    }
    return RunMetrics(
        coverage_pct=coverage,
        people_evacuated=sum(evacuated.values()),
        mean_response_s=(round(sum(travel_times) / len(travel_times), 2) if travel_times else None),
        max_response_s=(max(travel_times) if travel_times else None),
        shortfall=shortfall,
        events_processed=len(events),
        points_cleared=sum(1 for p in res.world.rescue_points if p.status is PointStatus.CLEARED),
        units_dispatched=len({rec.unit_id for rec in res.dispatches}),
    )


def format_metrics_table(m: RunMetrics) -> str:
    """Small fixed-width table for terminal output."""
    lines = ["metric                     value", "-" * 33]
    for level in ("high", "medium", "low"):
        pct = m.coverage_pct.get(level)
        lines.append(f"coverage {level:<17} {'-' if pct is None else f'{pct:.2f}%'}")
    lines.append(f"people evacuated           {m.people_evacuated}")
    lines.append(
        f"mean response              {'-' if m.mean_response_s is None else f'{m.mean_response_s:.0f} s'}"
    )
    lines.append(
        f"max response               {'-' if m.max_response_s is None else f'{m.max_response_s} s'}"
    )
    lines.append(f"points cleared             {m.points_cleared}")
    lines.append(f"units dispatched           {m.units_dispatched}")
    lines.append(f"events processed           {m.events_processed}")
    if any(m.shortfall.values()):
        lines.append("shortfall:")
        for pid, value in sorted(m.shortfall.items()):
            if value:
                lines.append(f"  {pid:<24} {value}")
    return "\n".join(lines)


def metrics_json(m: RunMetrics) -> str:
    return canonical_dumps(metrics_to_jsonable(m))
