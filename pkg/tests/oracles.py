"""Independent reference implementations used to cross-check the package.

Everything here is written from scratch against the documented behavior and
shares no scoring or geometry code with the package under test. Keep it that
way: these are the oracles the tests trust.
"""
from __future__ import annotations

import itertools
import math

EARTH_RADIUS_KM = 6371.0


def enumerate_best(
    unit_ids: list[str],
    seats: list[int],
    point_ids: list[str],
    demands: list[int],
    weights: list[int],
    cells: list[list[int | None]],
) -> tuple[int, int, int, tuple[tuple[str, str], ...]]:
    """Brute-force optimum over every unit -> point-or-unassigned mapping.

    cells[i][j] is the travel time in seconds from unit i to point j, or None
    when unreachable. Returns (weighted_coverage, total_makespan, total_time,
    assignment_pairs) for the best mapping under: maximize weighted coverage,
    then minimize summed per-point makespan, then minimize total travel time,
    then smallest sorted (unit id, point id) pair list.
    """
    n, m = len(unit_ids), len(point_ids)
    choices = [[None] + [j for j in range(m) if cells[i][j] is not None] for i in range(n)]
    best = None
    for combo in itertools.product(*choices):
        coverage = [0] * m
        makespan = [0] * m
        total_time = 0
        for i, j in enumerate(combo):
            if j is None:
                continue
            coverage[j] += seats[i]
            t = cells[i][j]
            if t > makespan[j]:
                makespan[j] = t
            total_time += t
        wc = sum(weights[j] * min(demands[j], coverage[j]) for j in range(m))
        pairs = tuple(
            sorted((unit_ids[i], point_ids[j]) for i, j in enumerate(combo) if j is not None)
        )
        key = (-wc, sum(makespan), total_time, pairs)
        if best is None or key < best:
            best = key
    assert best is not None
    return (-best[0], best[1], best[2], best[3])


def priority_property_holds(
    assignments: dict[str, str],
    unit_seats: dict[str, int],
    point_priority_rank: dict[str, int],
    point_demand: dict[str, int],
    reachable: dict[tuple[str, str], bool],
) -> bool:
    """True unless some higher-priority point is left short while a strictly
    lower-priority point holds a unit that could have served it."""
    covered: dict[str, int] = {p: 0 for p in point_priority_rank}
    for unit_id, point_id in assignments.items():
        covered[point_id] += unit_seats[unit_id]
    for high in point_priority_rank:
        if covered[high] >= point_demand[high]:
            continue
        for unit_id, low in assignments.items():
            if point_priority_rank[low] >= point_priority_rank[high]:
                continue
            if reachable.get((unit_id, high)) and unit_seats[unit_id] >= 1:
                return False
    return True


def sloc_distance_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance by the spherical law of cosines (not haversine)."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    arg = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return EARTH_RADIUS_KM * math.acos(max(-1.0, min(1.0, arg)))


def decimal_round_half_up_seconds(km: float, kmh: float) -> int:
    """Whole-second travel time via decimal arithmetic, rounding .5 up."""
    from decimal import Decimal, ROUND_HALF_UP

    seconds = Decimal(repr(km)) / Decimal(repr(kmh)) * Decimal(3600)
    return int(seconds.quantize(Decimal("1"), rounding=ROUND_HALF_UP))
