"""Travel-time estimation between volunteer units and rescue points.

Two providers: a deterministic offline great-circle estimator and an
external OSRM-compatible HTTP route service. External failures degrade to
the offline estimate so a matrix can always be built.
"""
from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import requests

from .domain import (
    EARTH_RADIUS_KM,
    GeoPoint,
    RescuePoint,
    RoadClosure,
    TransportMode,
    VolunteerUnit,
)

DEFAULT_MODE_SPEEDS_KMH = {TransportMode.ROAD: 40.0, TransportMode.WATER: 15.0}
DEFAULT_MAX_RESPONSE_S = 3600


class ConfigError(ValueError):
    """Bad or missing routing configuration."""


class ProviderError(RuntimeError):
    """External routing provider failed (timeout, bad status, bad body)."""


@dataclass(frozen=True)
class RoutingProviderConfig:
    kind: str = "offline"  # "offline" | "external"
    base_url: str = ""
    timeout_ms: int = 2000
    mode_speeds: dict[TransportMode, float] = field(
        default_factory=lambda: dict(DEFAULT_MODE_SPEEDS_KMH)
    )
    max_response_s: int = DEFAULT_MAX_RESPONSE_S
    parallelism: int = 4

    def __post_init__(self):
        if self.kind not in ("offline", "external"):
            raise ConfigError(f"routing.kind must be 'offline' or 'external', got {self.kind!r}")
        if self.kind == "external" and not self.base_url:
            raise ConfigError("routing.base_url required for the external provider")
        if self.timeout_ms <= 0:
            raise ConfigError("routing.timeout_ms must be positive")
        if any(v <= 0 for v in self.mode_speeds.values()):
            raise ConfigError("routing.mode_speeds must be positive")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance on a sphere of radius 6371.0 km."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def round_half_up(x: float) -> int:
    # round() is banker's rounding; the wire contract is half-up.
    return math.floor(x + 0.5)


def estimate_offline(a: GeoPoint, b: GeoPoint, mode: TransportMode, cfg: RoutingProviderConfig) -> int:
    """Whole seconds to travel a->b at the configured speed for the mode."""
    speed = cfg.mode_speeds.get(mode)
    if speed is None:
        raise ConfigError(f"no speed configured for mode {mode.value}")
    hours = haversine_km(a, b) / speed
    return round_half_up(hours * 3600.0)


def fetch_external(a: GeoPoint, b: GeoPoint, cfg: RoutingProviderConfig) -> int:
    """First route's duration from an OSRM-compatible endpoint, in whole seconds."""
    url = f"{cfg.base_url.rstrip('/')}/route/v1/driving/{a.lon},{a.lat};{b.lon},{b.lat}"
    try:
        resp = requests.get(url, params={"overview": "false"}, timeout=cfg.timeout_ms / 1000.0)
    except requests.RequestException as exc:
        raise ProviderError(f"route request failed: {exc}") from exc
    if not 200 <= resp.status_code < 300:
        raise ProviderError(f"route request returned status {resp.status_code}")
    try:
        body = resp.json()
        duration = body["routes"][0]["duration"]
        if not isinstance(duration, (int, float)) or duration < 0:
            raise ValueError("bad duration")
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"malformed route response: {exc}") from exc
    return round_half_up(float(duration))


def closure_blocks(closure: RoadClosure, origin: GeoPoint, dest: GeoPoint, mode: TransportMode) -> bool:
    """A closure blocks a pair when one endpoint is inside each region (either
    orientation) and the mode matches."""
    if closure.mode is not mode:
        return False
    o_in_a = haversine_km(origin, closure.a) <= closure.a_radius_km
    o_in_b = haversine_km(origin, closure.b) <= closure.b_radius_km
    d_in_a = haversine_km(dest, closure.a) <= closure.a_radius_km
    d_in_b = haversine_km(dest, closure.b) <= closure.b_radius_km
    return (o_in_a and d_in_b) or (o_in_b and d_in_a)


UNREACHABLE = None


@dataclass(frozen=True)
class TimeMatrix:
    """Travel seconds per (unit, point) pair; None marks an unreachable pair.

    `degraded` lists pairs whose external fetch failed and fell back to the
    offline estimate.
    """

    unit_ids: tuple[str, ...]
    point_ids: tuple[str, ...]
    cells: dict[tuple[str, str], int | None]
    degraded: tuple[str, ...] = ()

    def get(self, unit_id: str, point_id: str) -> int | None:
        return self.cells[(unit_id, point_id)]

    def reachable(self, unit_id: str, point_id: str) -> bool:
        return self.cells.get((unit_id, point_id)) is not None


class TravelTimeService:
    """Builds time matrices; read-through cache keyed by (origin, dest, mode)."""

    def __init__(self, cfg: RoutingProviderConfig):
        self.cfg = cfg
        self._cache: dict[tuple[float, float, float, float, str], tuple[int, bool]] = {}
        self._lock = threading.Lock()

    def estimate(self, a: GeoPoint, b: GeoPoint, mode: TransportMode) -> tuple[int, bool]:
        """(seconds, degraded): degraded means the external provider failed
        and the offline estimate was used instead."""
        key = (a.lat, a.lon, b.lat, b.lon, mode.value)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        # External routing covers the road network; water legs are estimated.
        if self.cfg.kind == "external" and mode is TransportMode.ROAD:
            try:
                result = (fetch_external(a, b, self.cfg), False)
            except ProviderError:
                result = (estimate_offline(a, b, mode, self.cfg), True)
        else:
            result = (estimate_offline(a, b, mode, self.cfg), False)
        with self._lock:
            self._cache[key] = result
        return result

    def build_time_matrix(
        self,
        units: Sequence[VolunteerUnit],
        points: Sequence[RescuePoint],
        closures: Iterable[RoadClosure] = (),
        max_response_s: int | None = None,
    ) -> TimeMatrix:
        """Filtered travel times for the full units x points cross product.

        A cell is unreachable when the unit's mode cannot access the point,
        a closure blocks the pair, or the estimate exceeds max_response_s.
        """
        limit = self.cfg.max_response_s if max_response_s is None else max_response_s
        closures = tuple(closures)
        pairs = [
            (u, p)
            for u in units
            for p in points
            if u.vehicle.mode in p.accessible_modes
            and not any(closure_blocks(c, u.location, p.location, u.vehicle.mode) for c in closures)
        ]
        estimates: dict[tuple[str, str], tuple[int, bool]] = {}
        if self.cfg.kind == "external" and len(pairs) > 1:
            with ThreadPoolExecutor(max_workers=max(1, self.cfg.parallelism)) as pool:
                results = pool.map(
                    lambda up: self.estimate(up[0].location, up[1].location, up[0].vehicle.mode), pairs
                )
                for (u, p), res in zip(pairs, results):
                    estimates[(u.id, p.id)] = res
        else:
            for u, p in pairs:
                estimates[(u.id, p.id)] = self.estimate(u.location, p.location, u.vehicle.mode)

        cells: dict[tuple[str, str], int | None] = {}
        degraded: list[str] = []
        for u in units:
            for p in points:
                key = (u.id, p.id)
                if key not in estimates:
                    cells[key] = UNREACHABLE
                    continue
                seconds, was_degraded = estimates[key]
                if was_degraded:
                    degraded.append(f"{u.id}->{p.id}")
                cells[key] = seconds if seconds <= limit else UNREACHABLE
        return TimeMatrix(
            unit_ids=tuple(u.id for u in units),
            point_ids=tuple(p.id for p in points),
            cells=cells,
            degraded=tuple(sorted(set(degraded))),
        )


def build_time_matrix(
    units: Sequence[VolunteerUnit],
    points: Sequence[RescuePoint],
    closures: Iterable[RoadClosure],
    max_response_s: int,
    cfg: RoutingProviderConfig,
) -> TimeMatrix:
    """One-shot matrix build without a shared cache."""
    return TravelTimeService(cfg).build_time_matrix(units, points, closures, max_response_s)
