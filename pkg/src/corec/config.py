"""Service configuration: listen address, event log and bulletin paths,
routing provider settings, priority weights, and the static token table."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .domain import (
    DEFAULT_PRIORITY_WEIGHTS,
    Priority,
    Role,
    TransportMode,
    ValidationError,
    WorldState,
    parse_world,
    _enum,
)
from .travel import RoutingProviderConfig


@dataclass(frozen=True)
class TokenEntry:
    id: str
    role: Role


@dataclass(frozen=True)
class ServiceConfig:
    listen_addr: str = "127.0.0.1:8000"
    event_log_path: str | None = None
    bulletin_path: str | None = None
    routing: RoutingProviderConfig = field(default_factory=RoutingProviderConfig)
    weights: dict[Priority, int] = field(default_factory=lambda: dict(DEFAULT_PRIORITY_WEIGHTS))
    tokens: dict[str, TokenEntry] = field(default_factory=dict)
    world: WorldState = field(default_factory=WorldState)


def parse_routing(obj: dict) -> RoutingProviderConfig:
    if not isinstance(obj, dict):
        raise ValidationError("routing: expected object")
    speeds = dict(RoutingProviderConfig().mode_speeds)
    for mode_raw, kmh in (obj.get("mode_speeds") or {}).items():
        mode = _enum(TransportMode, mode_raw, "routing.mode_speeds")
        if not isinstance(kmh, (int, float)) or isinstance(kmh, bool) or kmh <= 0:
            raise ValidationError(f"routing.mode_speeds.{mode_raw}: must be a positive number")
        speeds[mode] = float(kmh)
    kwargs = dict(
        kind=obj.get("provider", obj.get("kind", "offline")),
        base_url=obj.get("base_url", ""),
        mode_speeds=speeds,
    )
    for key in ("timeout_ms", "max_response_s", "parallelism"):
        if key in obj:
            value = obj[key]
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ValidationError(f"routing.{key}: must be a positive integer")
            kwargs[key] = value
    return RoutingProviderConfig(**kwargs)


def parse_weights(obj: dict) -> dict[Priority, int]:
    weights = dict(DEFAULT_PRIORITY_WEIGHTS)
    if not isinstance(obj, dict):
        raise ValidationError("weights: expected object")
    for raw, value in obj.items():
        priority = _enum(Priority, raw, "weights")
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ValidationError(f"weights.{raw}: must be a positive integer")
        weights[priority] = value
    return weights


def parse_tokens(obj: dict) -> dict[str, TokenEntry]:
    tokens: dict[str, TokenEntry] = {}
    if not isinstance(obj, dict):
        raise ValidationError("auth.tokens: expected object")
    for token, entry in obj.items():
        if not isinstance(entry, dict):
            raise ValidationError(f"auth.tokens[{token}]: expected object")
        pid = entry.get("id")
        if not pid or not isinstance(pid, str):
            raise ValidationError(f"auth.tokens[{token}]: 'id' must be a non-empty string")
        role = _enum(Role, entry.get("role"), f"auth.tokens[{token}].role")
        if role is Role.SYSTEM:
            raise ValidationError(f"auth.tokens[{token}]: the system role cannot hold a token")
        tokens[token] = TokenEntry(id=pid, role=role)
    return tokens


def load_config(path: str | Path) -> ServiceConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config: invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError("config: expected a JSON object")
    world = WorldState()
    if "world_path" in raw:
        world_file = (path.parent / raw["world_path"]).resolve()
        try:
            world_raw = json.loads(world_file.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ValidationError(f"config: cannot read world file {world_file}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config: invalid JSON in {world_file}: {exc}") from exc
        world = parse_world(world_raw)
    elif "world" in raw:
        world = parse_world(raw["world"])
    listen_addr = raw.get("listen_addr", "127.0.0.1:8000")
    if not isinstance(listen_addr, str) or ":" not in listen_addr:
        raise ValidationError("config: listen_addr must be 'host:port'")
    return ServiceConfig(
        listen_addr=listen_addr,
        event_log_path=raw.get("event_log_path"),
        bulletin_path=raw.get("bulletin_path"),
        routing=parse_routing(raw.get("routing") or {}),
        weights=parse_weights(raw.get("weights") or {}),
        tokens=parse_tokens((raw.get("auth") or {}).get("tokens") or {}),
        world=world,
    )
