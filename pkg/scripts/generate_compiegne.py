"""Author the bundled Compiegne flood scenario.

Builds the script stage by stage, re-running the whole scenario after each
stage to inspect the resulting world. Every dispatch therefore references
real plan contents and every clear lands on a point whose demand actually
reached zero. The finished scenario is verified end to end (all points
cleared, no audit entries, deterministic re-run) before the file and its
golden fingerprints are written.
"""
from __future__ import annotations

import hashlib
import json
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from corec.domain import Availability, canonical_dumps, world_digest
from corec.sim import RunResult, metrics_to_jsonable, parse_scenario, run
from corec.store import log_to_bytes
from corec.travel import haversine_km

ROOT = Path(__file__).resolve().parents[1]
CENTER = (49.4179, 2.8261)  # Compiegne city centre

FIRST = [
    "Adele", "Bastien", "Camille", "Damien", "Elise", "Fabien", "Gaelle", "Hugo",
    "Ines", "Julien", "Karim", "Lea", "Mathis", "Nadia", "Olivier", "Pauline",
    "Quentin", "Romane", "Sofiane", "Theo", "Ugo", "Valerie", "William", "Xavier",
    "Yasmine", "Zoe", "Antoine", "Brigitte", "Cedric", "Delphine", "Etienne",
    "Fanny", "Gilles", "Helene", "Ismael", "Jeanne", "Kevin", "Lucie", "Marc",
    "Nicolas", "Odile", "Pierre", "Rachid", "Sabine", "Tristan", "Ursule",
    "Vincent", "Wendy", "Yann", "Zacharie",
]
LAST = [
    "Moreau", "Lefevre", "Garnier", "Dubois", "Lambert", "Rousseau", "Fontaine",
    "Chevalier", "Baron", "Picard",
]

POINTS = [
    # id, lat, lon, priority, modes
    ("p-1", 49.4321, 2.8550, "high", ["road"]),
    ("p-2", 49.4018, 2.7952, "high", ["road"]),
    ("p-3", 49.4402, 2.8203, "medium", ["road"]),
    ("p-4", 49.4151, 2.8654, "medium", ["road", "water"]),
    ("p-5", 49.3903, 2.8401, "medium", ["road"]),
    ("p-6", 49.4253, 2.7804, "low", ["road"]),
    ("p-7", 49.4082, 2.8322, "low", ["road", "water"]),
    ("p-8", 49.3981, 2.8650, "low", ["road"]),
]

SHELTERS = [
    {"id": "gym-1", "location": {"lat": 49.4203, "lon": 2.8190}, "capacity": 300, "occupancy": 0},
    {"id": "gym-2", "location": {"lat": 49.4105, "lon": 2.8415}, "capacity": 250, "occupancy": 0},
    {"id": "gym-3", "location": {"lat": 49.4280, "lon": 2.8330}, "capacity": 200, "occupancy": 0},
]

# First-wave demand reports: (point, demand, special_needs, author).
REPORTS = [
    ("p-1", 45, 6, "aff-1"),
    ("p-2", 40, 4, "aff-2"),
    ("p-3", 38, 0, "aff-3"),
    ("p-4", 35, 3, "aff-1"),
    ("p-5", 30, 0, "aff-2"),
    ("p-6", 28, 0, "aff-3"),
    ("p-7", 25, 0, "aff-1"),
    ("p-8", 20, 0, "aff-2"),
]

SECOND_WAVE = [("p-5", 12, 0, "aff-2"), ("p-8", 9, 0, "aff-3")]

REJECTED = {"u-013", "u-037"}


def build_units() -> list[dict]:
    rng = random.Random(20260815)
    units = []
    for n in range(1, 51):
        uid = f"u-{n:03d}"
        name = f"{FIRST[n - 1]} {LAST[(n - 1) % len(LAST)]}"
        lat = CENTER[0] + rng.uniform(-0.045, 0.045)
        lon = CENTER[1] + rng.uniform(-0.065, 0.065)
        if n > 45:
            vehicle = {"id": f"v-{n:03d}", "mode": "water", "capacity": 6,
                       "special_needs_capable": n == 46}
        elif n <= 30:
            vehicle = {"id": f"v-{n:03d}", "mode": "road", "capacity": 9,
                       "special_needs_capable": n % 4 == 1}
        else:
            vehicle = {"id": f"v-{n:03d}", "mode": "road", "capacity": 5,
                       "special_needs_capable": n % 5 == 0}
        units.append({
            "id": uid,
            "driver_name": name,
            "contact": f"{FIRST[n - 1].lower()}.{LAST[(n - 1) % len(LAST)].lower()}@example.org",
            "location": {"lat": round(lat, 6), "lon": round(lon, 6)},
            "vehicle": vehicle,
        })
    return units


def latest_plan_assignments(result: RunResult) -> dict[str, str]:
    assignments: dict[str, str] = {}
    for ev in result.events:
        if ev.kind.value == "plan_proposed":
            assignments = ev.payload["plan"]["assignments"]
    return assignments


def main() -> None:
    initial = {
        "rescue_points": [
            {
                "id": pid,
                "location": {"lat": lat, "lon": lon},
                "demand": 0,
                "special_needs": 0,
                "priority": priority,
                "accessible_modes": modes,
            }
            for pid, lat, lon, priority, modes in POINTS
        ],
        "shelters": SHELTERS,
        "units": [],
        "closures": [],
    }
    participants = [
        {"id": "dm-1", "role": "decision_maker"},
        {"id": "aff-1", "role": "affected"},
        {"id": "aff-2", "role": "affected"},
        {"id": "aff-3", "role": "affected"},
    ]
    units = build_units()
    script: list[dict] = []

    def rerun() -> RunResult:
        scenario = parse_scenario({
            "schema": 1,
            "name": "Compiegne flood evacuation",
            "rng_seed": 0,
            "participants": participants,
            "initial": initial,
            "script": script,
        })
        return run(scenario)

    script.append({
        "at": 0, "action": "bulletin", "author": "dm-1",
        "text": "Flood alert: the Oise is overflowing. Citizen volunteers with "
                "vehicles are asked to register. Three gymnasiums are open as shelters.",
    })
    at = 10
    for u in units:
        script.append({"at": at, "action": "register", "id": u["id"],
                       "driver_name": u["driver_name"], "contact": u["contact"],
                       "location": u["location"], "vehicle": u["vehicle"]})
        at += 1
    at = 70
    for u in units:
        verdict = "rejected" if u["id"] in REJECTED else "approved"
        script.append({"at": at, "action": "vet", "author": "dm-1",
                       "registration_id": u["id"], "verdict": verdict})
        at += 1
    at = 130
    for pid, demand, special, author in REPORTS:
        script.append({"at": at, "action": "report", "author": author,
                       "claim": {"type": "demand_update", "point_id": pid,
                                 "demand": demand, "special_needs": special}})
        at += 2
    script.append({"at": at, "action": "report", "author": "aff-1",
                   "claim": {"type": "need_note", "point_id": "p-1",
                             "text": "Two residents need insulin before transport.",
                             "tags": ["medical"]}})
    script.append({"at": 150, "action": "propose", "author": "dm-1"})
    script.append({"at": 160, "action": "dispatch", "author": "dm-1", "plan_id": "latest"})

    stage1 = rerun()
    assert not stage1.audit, stage1.audit
    plan = latest_plan_assignments(stage1)
    world = stage1.world
    dispatched = {
        u.id: u for u in world.units if u.availability is Availability.DISPATCHED
    }
    print(f"stage1: {len(dispatched)} units dispatched across {len(set(plan.values()))} points")

    # Pick a dispatched road pair to sever. The unit must carry no
    # special-needs passengers (so any free unit can absorb the restored
    # demand) and every other unit serving the same point must sit outside
    # the closure circle so exactly one assignment is released.
    committed = {}
    for ev in stage1.events:
        if ev.kind.value == "plan_dispatched":
            for a in ev.payload["assignments"]:
                committed[a["unit_id"]] = a
    severed_unit = severed_point = None
    for uid in sorted(plan):
        unit = dispatched.get(uid)
        if unit is None or unit.vehicle.mode.value != "road":
            continue
        if committed[uid]["special_people"] != 0:
            continue
        pid = plan[uid]
        collateral = any(
            other_id != uid and plan.get(other_id) == pid
            and haversine_km(dispatched[other_id].location, unit.location) < 1.0
            for other_id in dispatched
        )
        if not collateral:
            severed_unit, severed_point = uid, pid
            break
    assert severed_unit is not None, "no safe closure candidate"
    u_loc = dispatched[severed_unit].location
    p_loc = world.point(severed_point).location
    script.append({
        "at": 170, "action": "report", "author": severed_unit,
        "claim": {"type": "closure", "closure": {
            "id": "c-1",
            "a": {"lat": u_loc.lat, "lon": u_loc.lon}, "a_radius_km": 0.8,
            "b": {"lat": p_loc.lat, "lon": p_loc.lon}, "b_radius_km": 0.4,
            "mode": "road",
        }},
    })

    stage2 = rerun()
    assert not stage2.audit, stage2.audit
    released = [
        u.id for u in stage2.world.units
        if u.id in dispatched and u.availability is Availability.AVAILABLE
    ]
    print(f"stage2: closure near {severed_point} released {released}")
    assert released == [severed_unit], f"expected only {severed_unit}, got {released}"

    script.append({
        "at": 175, "action": "bulletin", "author": "dm-1",
        "text": f"Road closed near rescue point {severed_point}; crews are being "
                "re-routed automatically.",
    })
    script.append({"at": 180, "action": "dispatch", "author": "dm-1",
                   "plan_id": "latest", "only_available": True})
    at = 200
    for pid, demand, special, author in SECOND_WAVE:
        script.append({"at": at, "action": "report", "author": author,
                       "claim": {"type": "demand_update", "point_id": pid,
                                 "demand": demand, "special_needs": special}})
        at += 3
    script.append({"at": 210, "action": "dispatch", "author": "dm-1",
                   "plan_id": "latest", "only_available": True})

    stage3 = rerun()
    assert not stage3.audit, stage3.audit
    for p in sorted(stage3.world.rescue_points, key=lambda p: p.id):
        print(f"stage3: {p.id} demand={p.demand} status={p.status.value}")
        assert p.demand == 0, f"{p.id} still has demand {p.demand}; resize the fleet"

    at = 300
    for pid, *_ in POINTS:
        script.append({"at": at, "action": "clear", "author": "dm-1", "point_id": pid})
        at += 5

    stage4 = rerun()
    assert not stage4.audit, stage4.audit
    returned = sorted(
        u.id for u in stage4.world.units if u.availability is Availability.DISPATCHED
    )[:6]
    at = 360
    for uid in returned:
        script.append({"at": at, "action": "unit_status", "author": uid,
                       "unit_id": uid, "availability": "available"})
        at += 2
    at = 380
    for author, rating, text in [
        ("aff-1", 5, "Picked up quickly, thank you."),
        ("aff-2", 4, "Long wait but everyone got out."),
        ("u-003", 5, "Clear instructions the whole way."),
        ("aff-3", 3, "The second boat was late."),
        ("u-021", 4, "Route change arrived in time."),
    ]:
        script.append({"at": at, "action": "feedback", "author": author,
                       "rating": rating, "text": text})
        at += 1
    script.append({
        "at": 400, "action": "bulletin", "author": "dm-1",
        "text": "All rescue points cleared. Thanks to the volunteer drivers; "
                "shelters remain open overnight.",
    })

    final1 = rerun()
    final2 = rerun()
    assert not final1.audit, final1.audit
    statuses = {p.id: p.status.value for p in final1.world.rescue_points}
    assert all(v == "cleared" for v in statuses.values()), statuses
    b1, b2 = log_to_bytes(final1.events), log_to_bytes(final2.events)
    assert b1 == b2, "re-runs differ"

    scenario_obj = {
        "schema": 1,
        "name": "Compiegne flood evacuation",
        "rng_seed": 0,
        "participants": participants,
        "initial": initial,
        "script": script,
    }
    out = ROOT / "src" / "corec" / "data" / "compiegne.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(scenario_obj, indent=1, sort_keys=True) + "\n", encoding="ascii")
    print(f"wrote {out} ({len(script)} actions, {len(final1.events)} events)")

    golden = {
        "events": len(final1.events),
        "log_sha256": hashlib.sha256(b1).hexdigest(),
        "world_digest": world_digest(final1.world),
        "units_dispatched": final1.metrics.units_dispatched,
    }
    tdata = ROOT / "tests" / "data"
    tdata.mkdir(parents=True, exist_ok=True)
    (tdata / "compiegne_metrics.json").write_text(
        canonical_dumps(metrics_to_jsonable(final1.metrics)) + "\n", encoding="ascii"
    )
    (tdata / "compiegne_golden.json").write_text(
        canonical_dumps(golden) + "\n", encoding="ascii"
    )
    print("metrics:", canonical_dumps(metrics_to_jsonable(final1.metrics)))
    print("golden:", canonical_dumps(golden))


if __name__ == "__main__":
    main()
