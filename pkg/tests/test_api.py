"""HTTP surface: auth and error envelopes, registration round trip, report
and plan workflows, dispatch, synthesis, the SSE stream, and config loading."""
import json
import threading
import time

import pytest
from fastapi.testclient import TestClient

from corec.api import app_from_config, create_app
from corec.config import (
    ServiceConfig,
    TokenEntry,
    load_config,
    parse_routing,
    parse_tokens,
    parse_weights,
)
from corec.domain import (
    Priority,
    Role,
    ValidationError,
    WorldState,
    world_digest,
    world_to_jsonable,
)
from corec.engine import ContextEngine
from helpers import make_point, make_shelter, make_unit

P1 = dict(lat=49.42, lon=2.83)
P2 = dict(lat=49.46, lon=2.86)

TOKENS = {
    "tok-dm": TokenEntry(id="dm-1", role=Role.DECISION_MAKER),
    "tok-aff": TokenEntry(id="aff-1", role=Role.AFFECTED),
    "tok-ghost": TokenEntry(id="ghost", role=Role.AFFECTED),
}


def auth(token):
    return {"Authorization": f"Bearer {token}"}


@pytest.fixture
def rig():
    initial = WorldState(
        rescue_points=(make_point("p-1", demand=4, **P1), make_point("p-2", demand=3, **P2)),
        shelters=(make_shelter(),),
    )
    engine = ContextEngine(
        initial,
        participants={"dm-1": Role.DECISION_MAKER, "aff-1": Role.AFFECTED},
        clock=lambda: 0,
    )
    app = create_app(engine, dict(TOKENS))
    with TestClient(app) as client:
        yield engine, client


def register_driver(client, uid, lat=49.40, lon=2.82, capacity=5):
    resp = client.post("/api/v1/register", json={
        "id": uid,
        "driver_name": f"driver {uid}",
        "contact": f"{uid}@example.org",
        "location": {"lat": lat, "lon": lon},
        "vehicle": {"id": f"v-{uid}", "mode": "road", "capacity": capacity,
                    "special_needs_capable": False},
    })
    assert resp.status_code == 200, resp.text
    return resp.json()


def approve(client, uid):
    resp = client.post(
        f"/api/v1/registrations/{uid}/vet", json={"verdict": "approved"}, headers=auth("tok-dm")
    )
    assert resp.status_code == 200, resp.text
    return resp.json()


def parse_sse(text):
    frames = []
    closed = False
    for block in text.split("\n\n"):
        if not block.strip():
            continue
        if block.startswith(":"):
            closed = block == ": stream closed"
            continue
        frame = {}
        for line in block.split("\n"):
            key, _, value = line.partition(": ")
            frame[key] = value
        frame["data"] = json.loads(frame["data"])
        frames.append(frame)
    return frames, closed


# -- auth and error envelopes ---------------------------------------------------


def test_healthz_is_public(rig):
    _, client = rig
    resp = client.get("/api/v1/healthz")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok", "events": 0}


def test_missing_and_unknown_tokens_return_401(rig):
    _, client = rig
    for headers in ({}, auth("tok-nope"), {"Authorization": "Basic abc"}):
        resp = client.get("/api/v1/world", headers=headers)
        assert resp.status_code == 401
        body = resp.json()
        assert body["error"]["code"] == "auth"
        assert isinstance(body["error"]["message"], str)


def test_wrong_role_returns_403(rig):
    _, client = rig
    for method, url in (
        ("post", "/api/v1/plans"),
        ("get", "/api/v1/plans/latest"),
        ("post", "/api/v1/plans/latest/dispatch"),
        ("get", "/api/v1/synthesis"),
        ("post", "/api/v1/registrations/u-1/vet"),
    ):
        resp = getattr(client, method)(url, headers=auth("tok-aff"), **(
            {"json": {}} if method == "post" else {}
        ))
        assert resp.status_code == 403, url
        assert resp.json()["error"]["code"] == "role"


def test_validation_and_state_envelopes(rig):
    _, client = rig
    resp = client.post("/api/v1/register", json={"driver_name": "x"})
    assert resp.status_code == 400
    assert resp.json()["error"]["code"] == "validation"
    resp = client.get("/api/v1/plans/plan-404", headers=auth("tok-dm"))
    assert resp.status_code == 409
    assert resp.json()["error"] == {"code": "state", "message": "unknown plan plan-404"}


# -- registration ----------------------------------------------------------------


def test_register_mints_a_working_driver_token(rig):
    engine, client = rig
    out = register_driver(client, "u-001")
    assert out["registration"] == {"id": "u-001", "driver_name": "driver u-001", "status": "pending"}
    assert out["token"] == "tok-u-001"
    assert out["seq"] == 1
    assert client.get("/api/v1/world", headers=auth("tok-u-001")).status_code == 200

    vetted = approve(client, "u-001")
    assert vetted["registration"]["status"] == "approved"
    assert vetted["registration"]["decided_by"] == "dm-1"
    assert engine.world().unit("u-001").qualification.value == "approved"

    dup = client.post(f"/api/v1/registrations/u-001/vet", json={"verdict": "approved"},
                      headers=auth("tok-dm"))
    assert dup.status_code == 409
    bad = client.post(f"/api/v1/registrations/u-001/vet", json={}, headers=auth("tok-dm"))
    assert bad.status_code == 400


# -- world and reports -------------------------------------------------------------


def test_world_snapshot_has_digest_and_seq(rig):
    engine, client = rig
    resp = client.get("/api/v1/world", headers=auth("tok-aff"))
    assert resp.status_code == 200
    body = resp.json()
    assert body["world"] == world_to_jsonable(engine.world())
    assert body["digest"] == world_digest(engine.world())
    assert body["seq"] == 0


def test_report_accept_and_reject(rig):
    engine, client = rig
    resp = client.post("/api/v1/reports", headers=auth("tok-aff"), json={
        "type": "demand_update", "point_id": "p-1", "demand": 6, "special_needs": 1,
    })
    assert resp.status_code == 200
    assert resp.json() == {"accepted": True, "seq": 1}
    assert engine.world().point("p-1").demand == 6

    wrapped = client.post("/api/v1/reports", headers=auth("tok-aff"), json={
        "claim": {"type": "need_note", "point_id": "p-1", "text": "water", "tags": ["water"]},
    })
    assert wrapped.status_code == 200

    invalid = client.post("/api/v1/reports", headers=auth("tok-aff"), json={
        "type": "demand_update", "point_id": "p-404", "demand": 1,
    })
    assert invalid.status_code == 400
    assert invalid.json()["error"]["message"] == "report claim rejected as invalid"

    ghost = client.post("/api/v1/reports", headers=auth("tok-ghost"), json={
        "type": "demand_update", "point_id": "p-1", "demand": 1,
    })
    assert ghost.status_code == 403
    assert ghost.json()["error"]["message"] == "author is not a registered participant"


# -- plans and dispatch -------------------------------------------------------------


def test_plan_propose_fetch_dispatch_flow(rig):
    engine, client = rig
    register_driver(client, "u-001", lat=49.40, lon=2.82)
    register_driver(client, "u-002", lat=49.41, lon=2.84)
    approve(client, "u-001")
    approve(client, "u-002")

    resp = client.post("/api/v1/plans", headers=auth("tok-dm"), json={})
    assert resp.status_code == 200
    plan = resp.json()["plan"]
    assert plan["id"] == "plan-1"
    assert plan["assignments"] == {"u-001": "p-1", "u-002": "p-2"}
    assert plan["status"] == "proposed"
    assert plan["score"]["weighted_coverage"] > 0

    fetched = client.get("/api/v1/plans/plan-1", headers=auth("tok-dm")).json()["plan"]
    assert fetched == plan
    assert client.get("/api/v1/plans/latest", headers=auth("tok-dm")).json()["plan"] == plan

    resp = client.post("/api/v1/plans/latest/dispatch", headers=auth("tok-dm"),
                       json={"unit_ids": ["u-001"]})
    assert resp.status_code == 200
    body = resp.json()
    assert body["plan_id"] == "plan-1"
    assert body["status_seqs"] == [body["dispatch_seq"] + 1]
    assert engine.world().unit("u-001").availability.value == "dispatched"
    assert client.get("/api/v1/plans/plan-1", headers=auth("tok-dm")).json()["plan"]["status"] == "dispatched"

    again = client.post("/api/v1/plans/plan-1/dispatch", headers=auth("tok-dm"),
                        json={"unit_ids": ["u-001"]})
    assert again.status_code == 409
    bad = client.post("/api/v1/plans/plan-1/dispatch", headers=auth("tok-dm"),
                      json={"unit_ids": "u-001"})
    assert bad.status_code == 400
    bad2 = client.post("/api/v1/plans", headers=auth("tok-dm"), json={"point_ids": [1]})
    assert bad2.status_code == 400


def test_dry_run_preview_leaves_log_untouched(rig):
    engine, client = rig
    register_driver(client, "u-001")
    approve(client, "u-001")
    before = client.get("/api/v1/healthz").json()["events"]

    preview = client.post("/api/v1/plans", headers=auth("tok-dm"), json={
        "dry_run": True,
        "edits": {"points": {"p-2": {"demand": 9, "priority": "high"}}},
    })
    assert preview.status_code == 200
    assert preview.json()["plan"]["id"] == "preview"
    assert preview.json()["plan"]["assignments"] == {"u-001": "p-2"}
    assert client.get("/api/v1/healthz").json()["events"] == before

    rejected = client.post("/api/v1/plans", headers=auth("tok-dm"), json={
        "edits": {"points": {"p-2": {"demand": 9}}},
    })
    assert rejected.status_code == 400


# -- feedback and synthesis -----------------------------------------------------------


def test_feedback_endpoint(rig):
    _, client = rig
    ok = client.post("/api/v1/feedback", headers=auth("tok-aff"), json={"rating": 5, "text": "merci"})
    assert ok.status_code == 200
    assert ok.json()["accepted"] is True
    bad = client.post("/api/v1/feedback", headers=auth("tok-aff"), json={"rating": 9})
    assert bad.status_code == 400
    ghost = client.post("/api/v1/feedback", headers=auth("tok-ghost"), json={"rating": 5})
    assert ghost.status_code == 403


def test_synthesis_endpoint_windows(rig):
    engine, client = rig
    register_driver(client, "u-001")
    approve(client, "u-001")
    plan = client.post("/api/v1/plans", headers=auth("tok-dm"), json={"point_ids": ["p-1"]}).json()["plan"]
    client.post(f"/api/v1/plans/{plan['id']}/dispatch", headers=auth("tok-dm"), json={})
    client.post("/api/v1/feedback", headers=auth("tok-aff"), json={"rating": 4, "text": ""})

    full = client.get("/api/v1/synthesis", headers=auth("tok-dm")).json()
    assert full["window"] == [1, len(engine.log.events)]
    assert full["totals"]["units_dispatched"] == 1
    assert full["feedback_digest"]["count"] == 1

    windowed = client.get("/api/v1/synthesis?from=2&to=3", headers=auth("tok-dm")).json()
    assert windowed["window"] == [2, 3]
    assert len(windowed["timeline"]) == 2

    bad = client.get("/api/v1/synthesis?from=0", headers=auth("tok-dm"))
    assert bad.status_code == 400


# -- event stream -----------------------------------------------------------------------


def test_sse_stream_replays_all_events_for_decision_maker(rig):
    engine, client = rig
    register_driver(client, "u-001")
    approve(client, "u-001")
    client.post("/api/v1/reports", headers=auth("tok-aff"), json={
        "type": "demand_update", "point_id": "p-1", "demand": 5,
    })
    resp = client.get("/api/v1/events?wait=0", headers=auth("tok-dm"))
    assert resp.status_code == 200
    assert resp.headers["content-type"].startswith("text/event-stream")
    frames, closed = parse_sse(resp.text)
    assert closed
    assert [int(f["id"]) for f in frames] == list(range(1, len(engine.log.events) + 1))
    for frame in frames:
        assert frame["data"]["seq"] == int(frame["id"])
        assert frame["data"]["kind"] == frame["event"]


def test_sse_resume_from_cursor_has_no_gaps_or_duplicates(rig):
    engine, client = rig
    register_driver(client, "u-001")
    approve(client, "u-001")
    client.post("/api/v1/reports", headers=auth("tok-aff"), json={
        "type": "demand_update", "point_id": "p-1", "demand": 5,
    })
    total = len(engine.log.events)
    frames, _ = parse_sse(client.get("/api/v1/events?wait=0&from=3", headers=auth("tok-dm")).text)
    assert [int(f["id"]) for f in frames] == list(range(3, total + 1))
    beyond, closed = parse_sse(
        client.get(f"/api/v1/events?wait=0&from={total + 1}", headers=auth("tok-dm")).text
    )
    assert beyond == [] and closed


def test_sse_stream_is_role_filtered(rig):
    engine, client = rig
    register_driver(client, "u-001")
    register_driver(client, "u-002")
    approve(client, "u-001")
    approve(client, "u-002")
    client.post("/api/v1/reports", headers=auth("tok-aff"), json={
        "type": "demand_update", "point_id": "p-1", "demand": 5,
    })
    plan_id = client.post("/api/v1/plans", headers=auth("tok-dm"), json={}).json()["plan"]["id"]
    client.post(f"/api/v1/plans/{plan_id}/dispatch", headers=auth("tok-dm"), json={})

    frames, _ = parse_sse(client.get("/api/v1/events?wait=0", headers=auth("tok-u-001")).text)
    kinds = [f["event"] for f in frames]
    assert "point_reported" not in kinds
    assert "plan_proposed" not in kinds
    dispatches = [f for f in frames if f["event"] == "plan_dispatched"]
    assert len(dispatches) == 1
    assert [a["unit_id"] for a in dispatches[0]["data"]["payload"]["assignments"]] == ["u-001"]

    unauthorized = client.get("/api/v1/events?wait=0")
    assert unauthorized.status_code == 401


def test_sse_delivers_events_appended_while_waiting(rig):
    engine, client = rig

    def late_publish():
        time.sleep(0.3)
        engine.publish_bulletin(None, "late news")

    thread = threading.Thread(target=late_publish, daemon=True)
    thread.start()
    started = time.monotonic()
    resp = client.get("/api/v1/events?wait=1.5", headers=auth("tok-aff"))
    elapsed = time.monotonic() - started
    thread.join()
    frames, closed = parse_sse(resp.text)
    assert closed
    assert any(
        f["event"] == "bulletin_published" and f["data"]["payload"]["text"] == "late news"
        for f in frames
    )
    assert elapsed < 5.0


# -- config loading -----------------------------------------------------------------------


def test_app_from_config_round_trip(tmp_path):
    world = WorldState(
        rescue_points=(make_point("p-1", demand=3, **P1),),
        shelters=(make_shelter(),),
        units=(make_unit("u-007", lat=49.40, lon=2.82),),
    )
    (tmp_path / "world.json").write_text(json.dumps(world_to_jsonable(world)))
    (tmp_path / "config.json").write_text(json.dumps({
        "listen_addr": "127.0.0.1:8123",
        "event_log_path": str(tmp_path / "events.ndjson"),
        "bulletin_path": str(tmp_path / "bulletins.ndjson"),
        "routing": {"provider": "offline", "mode_speeds": {"road": 50}},
        "weights": {"high": 5},
        "auth": {"tokens": {"tok-dm": {"id": "dm-1", "role": "decision_maker"}}},
        "world_path": "world.json",
    }))
    cfg = load_config(tmp_path / "config.json")
    assert cfg.listen_addr == "127.0.0.1:8123"
    assert cfg.weights[Priority.HIGH] == 5
    assert cfg.routing.mode_speeds[list(cfg.routing.mode_speeds)[0]] in (50.0, 15.0)

    with TestClient(app_from_config(cfg)) as client:
        # Drivers in the bootstrap world get deterministic tokens.
        assert client.get("/api/v1/world", headers=auth("tok-u-007")).status_code == 200
        resp = client.post("/api/v1/reports", headers=auth("tok-dm"), json={
            "type": "demand_update", "point_id": "p-1", "demand": 4,
        })
        assert resp.status_code == 200
        events = client.get("/api/v1/healthz").json()["events"]
    lines = (tmp_path / "events.ndjson").read_text().splitlines()
    assert len(lines) == events
    assert json.loads(lines[0])["kind"] == "point_reported"


def test_config_rejections(tmp_path):
    with pytest.raises(ValidationError, match="system role cannot hold a token"):
        parse_tokens({"t": {"id": "x", "role": "system"}})
    with pytest.raises(ValidationError, match="mode_speeds"):
        parse_routing({"mode_speeds": {"road": 0}})
    with pytest.raises(ValidationError, match="timeout_ms"):
        parse_routing({"timeout_ms": "fast"})
    with pytest.raises(ValidationError, match="weights"):
        parse_weights({"high": 0})
    with pytest.raises(ValidationError, match="weights"):
        parse_weights({"urgent": 3})
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ValidationError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ValidationError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    (tmp_path / "addr.json").write_text(json.dumps({"listen_addr": "nocolon"}))
    with pytest.raises(ValidationError, match="listen_addr"):
        load_config(tmp_path / "addr.json")
    assert ServiceConfig().listen_addr == "127.0.0.1:8000"
