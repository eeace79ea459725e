"""HTTP interface: one JSON API under /api/v1 serving decision-maker,
driver, and affected-person workflows, plus a server-sent event stream
filtered per role. Errors map to {"error": {"code", "message"}} with
400 (validation), 401 (unknown token), 403 (wrong role), 409 (state).
"""
from __future__ import annotations

import json
import time
from typing import Iterator

from fastapi import Body, Depends, FastAPI, Query, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .config import ServiceConfig, TokenEntry
from .domain import (
    Role,
    ValidationError,
    world_digest,
    world_to_jsonable,
)
from .engine import (
    Accepted,
    ContextEngine,
    Rejected,
    RoleError,
    StateError,
    synthesis_to_jsonable,
)
from .recommend import plan_to_jsonable
from .store import EventLog
from .travel import TravelTimeService


class AuthError(Exception):
    """Missing or unknown bearer token."""


def _error_body(code: str, message: str) -> dict:
    return {"error": {"code": code, "message": message}}


def engine_from_config(cfg: ServiceConfig) -> ContextEngine:
    participants = {entry.id: entry.role for entry in cfg.tokens.values()}
    return ContextEngine(
        cfg.world,
        log=EventLog(cfg.event_log_path),
        participants=participants,
        routing=TravelTimeService(cfg.routing),
        weights=cfg.weights,
        bulletin_path=cfg.bulletin_path,
    )


def app_from_config(cfg: ServiceConfig) -> FastAPI:
    engine = engine_from_config(cfg)
    tokens = dict(cfg.tokens)
    # Driver tokens are derived from the unit id so they survive restarts.
    for pid, role in engine.participants().items():
        if role is Role.DRIVER and not any(t.id == pid for t in tokens.values()):
            tokens[f"tok-{pid}"] = TokenEntry(id=pid, role=Role.DRIVER)
    return create_app(engine, tokens)


def create_app(engine: ContextEngine, tokens: dict[str, TokenEntry]) -> FastAPI:
    app = FastAPI(title="corec", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.engine = engine
    app.state.tokens = tokens

    def authenticate(request: Request) -> TokenEntry:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise AuthError("missing bearer token")
        entry = tokens.get(header[7:].strip())
        if entry is None:
            raise AuthError("unknown token")
        return entry

    def require(*roles: Role):
        def check(request: Request) -> TokenEntry:
            entry = authenticate(request)
            if roles and entry.role not in roles:
                raise RoleError(
                    f"role {entry.role.value} not allowed here"
                )
            return entry

        return Depends(check)

    any_role = require(Role.DECISION_MAKER, Role.DRIVER, Role.AFFECTED)
    dm_only = require(Role.DECISION_MAKER)

    @app.exception_handler(AuthError)
    async def _auth_error(request: Request, exc: AuthError):
        return JSONResponse(status_code=401, content=_error_body("auth", str(exc)))

    @app.exception_handler(RoleError)
    async def _role_error(request: Request, exc: RoleError):
        return JSONResponse(status_code=403, content=_error_body("role", str(exc)))

    @app.exception_handler(ValidationError)
    async def _validation_error(request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content=_error_body("validation", str(exc)))

    @app.exception_handler(StateError)
    async def _state_error(request: Request, exc: StateError):
        return JSONResponse(status_code=409, content=_error_body("state", str(exc)))

    @app.get("/api/v1/healthz")
    def healthz():
        return {"status": "ok", "events": len(engine.log.events)}

    @app.post("/api/v1/register")
    def register(application: dict = Body(...)):
        registration, seq = engine.register_driver(application)
        token = f"tok-{registration.id}"
        tokens[token] = TokenEntry(id=registration.id, role=Role.DRIVER)
        return {
            "registration": {
                "id": registration.id,
                "driver_name": registration.driver_name,
                "status": registration.status.value,
            },
            "token": token,
            "seq": seq,
        }

    @app.post("/api/v1/registrations/{registration_id}/vet")
    def vet(registration_id: str, body: dict = Body(...), entry: TokenEntry = dm_only):
        verdict = body.get("verdict")
        if not isinstance(verdict, str):
            raise ValidationError("body: 'verdict' must be a string")
        registration = engine.vet_registration(entry.id, registration_id, verdict)
        return {
            "registration": {
                "id": registration.id,
                "driver_name": registration.driver_name,
                "status": registration.status.value,
                "decided_by": registration.decided_by,
            }
        }

    @app.get("/api/v1/world")
    def world(entry: TokenEntry = any_role):
        w = engine.world()
        return {"world": world_to_jsonable(w), "digest": world_digest(w), "seq": len(engine.log.events)}

    @app.post("/api/v1/reports")
    def reports(body: dict = Body(...), entry: TokenEntry = any_role):
        result = engine.submit_report(entry.id, body.get("claim", body))
        if isinstance(result, Rejected):
            if result.reason == "unregistered":
                raise RoleError("author is not a registered participant")
            raise ValidationError("report claim rejected as invalid")
        return {"accepted": True, "seq": result.seq}

    @app.post("/api/v1/plans")
    def plans(body: dict = Body(default={}), entry: TokenEntry = dm_only):
        point_ids = body.get("point_ids")
        if point_ids is not None and (
            not isinstance(point_ids, list) or not all(isinstance(p, str) for p in point_ids)
        ):
            raise ValidationError("body: 'point_ids' must be a list of strings")
        plan = engine.propose_plan(
            entry.id,
            point_ids=point_ids,
            dry_run=bool(body.get("dry_run", False)),
            edits=body.get("edits"),
        )
        return {"plan": plan_to_jsonable(plan)}

    @app.get("/api/v1/plans/{plan_id}")
    def get_plan(plan_id: str, entry: TokenEntry = dm_only):
        plan = engine.get_plan(plan_id)
        if plan is None:
            raise StateError(f"unknown plan {plan_id}")
        return {"plan": plan_to_jsonable(plan)}

    @app.post("/api/v1/plans/{plan_id}/dispatch")
    def dispatch(plan_id: str, body: dict = Body(default={}), entry: TokenEntry = dm_only):
        unit_ids = body.get("unit_ids")
        if unit_ids is not None and (
            not isinstance(unit_ids, list) or not all(isinstance(u, str) for u in unit_ids)
        ):
            raise ValidationError("body: 'unit_ids' must be a list of strings")
        dispatch_seq, status_seqs = engine.dispatch(entry.id, plan_id, unit_ids)
        plan = engine.get_plan(plan_id if plan_id != "latest" else "latest")
        return {
            "plan_id": plan.id if plan else plan_id,
            "dispatch_seq": dispatch_seq,
            "status_seqs": status_seqs,
        }

    @app.post("/api/v1/feedback")
    def feedback(body: dict = Body(...), entry: TokenEntry = any_role):
        result = engine.submit_feedback(entry.id, body.get("rating"), body.get("text", ""))
        if isinstance(result, Rejected):
            raise RoleError("author is not a registered participant")
        return {"accepted": True, "seq": result.seq}

    @app.get("/api/v1/synthesis")
    def synthesis(
        entry: TokenEntry = dm_only,
        seq_from: int = Query(default=1, alias="from"),
        seq_to: int | None = Query(default=None, alias="to"),
    ):
        if seq_to is None:
            seq_to = len(engine.log.events)
        return synthesis_to_jsonable(engine.build_synthesis(seq_from, seq_to))

    @app.get("/api/v1/events")
    def events(
        request: Request,
        from_seq: int = Query(default=1, alias="from"),
        wait: float = Query(default=0.0, ge=0.0, le=60.0),
    ):
        entry = authenticate(request)
        if entry.role not in (Role.DECISION_MAKER, Role.DRIVER, Role.AFFECTED):
            raise RoleError(f"role {entry.role.value} not allowed here")

        def sse() -> Iterator[str]:
            cursor = from_seq
            deadline = time.monotonic() + wait
            while True:
                batch = engine.notifications(entry.role, entry.id, cursor)
                for note in batch:
                    cursor = max(cursor, note["seq"] + 1)
                    yield (
                        f"id: {note['seq']}\n"
                        f"event: {note['kind']}\n"
                        f"data: {json.dumps(note, sort_keys=True, separators=(',', ':'))}\n\n"
                    )
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                with engine.notify:
                    engine.notify.wait(timeout=min(remaining, 0.5))
            yield ": stream closed\n\n"

        return StreamingResponse(sse(), media_type="text/event-stream")

    return app


def serve(cfg: ServiceConfig) -> None:
    """Run the API with uvicorn; blocks until interrupted."""
    import uvicorn

    host, _, port = cfg.listen_addr.rpartition(":")
    uvicorn.run(app_from_config(cfg), host=host or "127.0.0.1", port=int(port))
