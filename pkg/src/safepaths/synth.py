"""Seeded synthetic trail generators and point sources.

No real sensor code ships with this package: clients ingest points either by
replaying a `.trail.jsonl` file or from the seeded random-walk source below.
The commuter generator doubles as the ground-truth fixture for dwell-anchor
detection (it knows where home and work are).

Generators anchor their coordinates away from the poles and the ±180° seam,
inside the flat-grid envelope documented in `matching`.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterator

from .matching import MatchParams
from .trail import GeoPoint, LocationTrail, TrailPoint, METERS_PER_DEGREE

MS = 1000
MINUTE_MS = 60 * MS
HOUR_MS = 60 * MINUTE_MS
DAY_MS = 24 * HOUR_MS


def offset_point(base: GeoPoint, north_m: float, east_m: float) -> GeoPoint:
    """Displace a point by local meters (equirectangular, same scale as the grid)."""
    lat = base.lat + north_m / METERS_PER_DEGREE
    lon = base.lon + east_m / (METERS_PER_DEGREE * math.cos(math.radians(base.lat)))
    return GeoPoint(lat=lat, lon=lon)


def random_walk_points(
    seed: int,
    start: GeoPoint,
    start_ms: int = 0,
    step_s: int = 300,
    speed_mps: float = 1.4,
    count: int | None = None,
) -> Iterator[TrailPoint]:
    """Seeded random walk: one fix per step, heading re-drawn each step."""
    rng = random.Random(seed)
    pos = start
    ts = start_ms
    emitted = 0
    while count is None or emitted < count:
        yield TrailPoint(position=pos, timestamp_ms=ts)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        dist = speed_mps * step_s
        pos = offset_point(pos, dist * math.cos(heading), dist * math.sin(heading))
        ts += step_s * MS
        emitted += 1


def replay_points(trail: LocationTrail) -> Iterator[TrailPoint]:
    yield from trail.points


@dataclass(frozen=True)
class CommuterFixture:
    trail: LocationTrail
    home: GeoPoint
    work: GeoPoint


def make_commuter_trail(
    seed: int,
    owner_id: str = "commuter",
    base: GeoPoint = GeoPoint(lat=47.6097, lon=-122.3331),
    days: int = 3,
    home_work_gap_m: float = 3000.0,
    sample_s: int = 300,
    jitter_m: float = 15.0,
    start_ms: int = 0,
) -> CommuterFixture:
    """Days of home-nights and work-days with a fast commute between them.

    Ground truth for dwell detection: ~10 h nightly at home, ~8 h daily at
    work. The commute is sampled at the same cadence but moves fast enough
    that no fix lands between the anchor jitter and several hundred meters
    out, which is what makes "zero points near home after auto-redaction"
    a deterministic property rather than a lucky one.
    """
    rng = random.Random(seed)
    home = base
    work = offset_point(base, home_work_gap_m, home_work_gap_m / 2.0)
    points: list[TrailPoint] = []
    ts = start_ms

    def jittered(anchor: GeoPoint) -> GeoPoint:
        r = rng.uniform(0.0, jitter_m)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        return offset_point(anchor, r * math.cos(theta), r * math.sin(theta))

    def dwell(anchor: GeoPoint, duration_ms: int):
        nonlocal ts
        end = ts + duration_ms
        while ts < end:
            points.append(TrailPoint(position=jittered(anchor), timestamp_ms=ts))
            ts += sample_s * MS

    def commute(src: GeoPoint, dst: GeoPoint, duration_ms: int):
        # Fast hop: interpolate along the straight segment; with a 3 km gap and
        # a 30 min commute every sampled fix is >= ~500 m from both anchors.
        nonlocal ts
        steps = max(1, duration_ms // (sample_s * MS))
        for i in range(1, steps):
            frac = i / steps
            mid = GeoPoint(
                lat=src.lat + (dst.lat - src.lat) * frac,
                lon=src.lon + (dst.lon - src.lon) * frac,
            )
            points.append(TrailPoint(position=mid, timestamp_ms=ts))
            ts += sample_s * MS
        ts += sample_s * MS

    for _ in range(days):
        dwell(home, 10 * HOUR_MS)
        commute(home, work, 30 * MINUTE_MS)
        dwell(work, 8 * HOUR_MS)
        commute(work, home, 30 * MINUTE_MS)

    trail = LocationTrail(owner_id=owner_id, points=tuple(points))
    return CommuterFixture(trail=trail, home=home, work=work)


def random_trail(
    rng: random.Random,
    owner_id: str,
    base: GeoPoint,
    n_points: int,
    spread_m: float = 60.0,
    start_ms: int = 0,
    max_step_ms: int = 5 * MINUTE_MS,
) -> LocationTrail:
    """Trail of n_points jittered around a base, strictly increasing timestamps."""
    points = []
    ts = start_ms
    for _ in range(n_points):
        north = rng.uniform(-spread_m, spread_m)
        east = rng.uniform(-spread_m, spread_m)
        points.append(TrailPoint(position=offset_point(base, north, east), timestamp_ms=ts))
        ts += rng.randint(1, max_step_ms)
    return LocationTrail(owner_id=owner_id, points=tuple(points))


def random_anchor(rng: random.Random, max_abs_lat: float = 60.0, max_abs_lon: float = 150.0) -> GeoPoint:
    return GeoPoint(lat=rng.uniform(-max_abs_lat, max_abs_lat), lon=rng.uniform(-max_abs_lon, max_abs_lon))


@dataclass(frozen=True)
class MatchInstance:
    user: LocationTrail
    carriers: list[tuple[str, LocationTrail]]
    params: MatchParams


def random_match_instance(
    rng: random.Random,
    max_total_points: int = 500,
    token_safe: bool = False,
) -> MatchInstance:
    """A user trail plus carrier trails clustered tightly enough to collide.

    With token_safe, anchors stay near the prime meridian where the one-cell
    token expansion is provably gap-free for cell_size == d_max (see the grid
    caveat in `matching`); otherwise anchors roam the documented envelope and
    only the adaptively-probed index is expected to be exact.
    """
    if token_safe:
        base = GeoPoint(lat=rng.uniform(-55.0, 55.0), lon=rng.uniform(-2.0, 2.0))
    else:
        base = random_anchor(rng)

    params = MatchParams(
        d_max_m=rng.choice([5.0, 10.0, 20.0]),
        dt_max_s=rng.choice([120, 300]),
        cell_size_m=rng.choice([5.0, 10.0, 25.0]),
        bucket_len_s=rng.choice([300, 600]),
    )
    if token_safe:
        # Token completeness additionally needs dt_max <= bucket_len and
        # cell >= d_max; mirror the shipped defaults' shape.
        params = MatchParams(
            d_max_m=params.d_max_m,
            dt_max_s=min(params.dt_max_s, params.bucket_len_s),
            cell_size_m=max(params.cell_size_m, params.d_max_m),
            bucket_len_s=params.bucket_len_s,
        )

    n_carriers = rng.randint(1, 4)
    budget = rng.randint(2, max_total_points)
    n_user = max(1, budget // (n_carriers + 1))
    start = rng.randint(0, 10 * DAY_MS)
    spread = rng.uniform(0.5, 6.0) * params.d_max_m

    user = random_trail(rng, "user", base, n_user, spread_m=spread, start_ms=start)
    carriers = []
    for i in range(n_carriers):
        n_c = max(1, (budget - n_user) // n_carriers)
        jitter = rng.randint(-2 * params.bucket_len_s * MS, 2 * params.bucket_len_s * MS)
        carriers.append(
            (
                f"carrier-{i}",
                random_trail(
                    rng, f"carrier-{i}", base, n_c, spread_m=spread, start_ms=max(0, start + jitter)
                ),
            )
        )
    return MatchInstance(user=user, carriers=carriers, params=params)
