"""Location-trail value types and the pure geometry/time operations over them.

Everything here is an immutable value; every operation is a pure function.
Timestamps are UTC unix milliseconds throughout the data plane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

EARTH_RADIUS_M = 6_371_000.0

# Equirectangular scale: meters per degree of latitude (and of longitude at
# the equator). Cell indexing floors local-meter offsets from the (0°, 0°)
# origin; the east scale is corrected by cos(lat), so the grid distorts at
# high latitudes and is cut at the ±180° meridian. Adequate at desk scale.
METERS_PER_DEGREE = 111_320.0

MS_PER_SECOND = 1_000
MS_PER_DAY = 86_400_000

RETENTION_MIN_DAYS = 14
RETENTION_MAX_DAYS = 37


class TrailParseError(ValueError):
    """A trail or ops file line failed to parse; carries the 1-based line number."""

    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no
        self.reason = reason


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into [-180, 180)."""
    wrapped = math.fmod(lon + 180.0, 360.0)
    if wrapped < 0:
        wrapped += 360.0
    return wrapped - 180.0


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not math.isfinite(self.lat) or not math.isfinite(self.lon):
            raise ValueError("coordinates must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        object.__setattr__(self, "lon", normalize_lon(self.lon))


@dataclass(frozen=True, slots=True)
class TrailPoint:
    position: GeoPoint
    timestamp_ms: int

    def __post_init__(self):
        if self.timestamp_ms < 0:
            raise ValueError("timestamp must be >= 0")


@dataclass(frozen=True, slots=True)
class LocationTrail:
    """An individual's movement history: ordered, strictly increasing timestamps."""

    owner_id: str
    points: tuple[TrailPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        for prev, cur in zip(self.points, self.points[1:]):
            if cur.timestamp_ms <= prev.timestamp_ms:
                raise ValueError(
                    f"trail timestamps must be strictly increasing "
                    f"({prev.timestamp_ms} -> {cur.timestamp_ms})"
                )

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, slots=True)
class GeoCell:
    row: int
    col: int
    cell_size_m: float

    def __post_init__(self):
        if self.cell_size_m <= 0:
            raise ValueError("cell_size_m must be > 0")


@dataclass(frozen=True, slots=True)
class TimeBucket:
    """Left-closed right-open interval [index * len, (index + 1) * len) seconds."""

    index: int
    bucket_len_s: int

    def __post_init__(self):
        if self.bucket_len_s <= 0:
            raise ValueError("bucket_len_s must be > 0")


@dataclass(frozen=True, slots=True)
class RetentionPolicy:
    retention_days: int = RETENTION_MAX_DAYS

    def __post_init__(self):
        if not RETENTION_MIN_DAYS <= self.retention_days <= RETENTION_MAX_DAYS:
            raise ValueError(
                f"retention_days must be in [{RETENTION_MIN_DAYS}, "
                f"{RETENTION_MAX_DAYS}], got {self.retention_days}"
            )

    @property
    def retention_ms(self) -> int:
        return self.retention_days * MS_PER_DAY


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371,000 m."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def geo_cell_of(position: GeoPoint, cell_size_m: float) -> GeoCell:
    """Grid cell containing a position, via the equirectangular local projection."""
    north_m = position.lat * METERS_PER_DEGREE
    east_m = position.lon * METERS_PER_DEGREE * math.cos(math.radians(position.lat))
    return GeoCell(
        row=math.floor(north_m / cell_size_m),
        col=math.floor(east_m / cell_size_m),
        cell_size_m=cell_size_m,
    )


def time_bucket_of(timestamp_ms: int, bucket_len_s: int) -> TimeBucket:
    return TimeBucket(index=timestamp_ms // (bucket_len_s * MS_PER_SECOND), bucket_len_s=bucket_len_s)


def quantize(p: TrailPoint, cell_size_m: float, bucket_len_s: int) -> tuple[GeoCell, TimeBucket]:
    """Map a trail point to its unique space-time cell."""
    if cell_size_m <= 0 or bucket_len_s <= 0:
        raise ValueError("cell_size_m and bucket_len_s must be > 0")
    return geo_cell_of(p.position, cell_size_m), time_bucket_of(p.timestamp_ms, bucket_len_s)


def coarsen(trail: LocationTrail, cell_size_m: float) -> tuple[GeoCell, ...]:
    """Deduplicated cells covering every trail point, sorted by (row, col)."""
    cells = {geo_cell_of(p.position, cell_size_m) for p in trail.points}
    return tuple(sorted(cells, key=lambda c: (c.row, c.col)))


def purge_older_than(trail: LocationTrail, policy: RetentionPolicy, now_ms: int) -> LocationTrail:
    """Drop points whose age reached the retention limit (keeps age strictly less)."""
    cutoff = now_ms - policy.retention_ms
    kept = tuple(p for p in trail.points if p.timestamp_ms > cutoff)
    if len(kept) == len(trail.points):
        return trail
    return LocationTrail(owner_id=trail.owner_id, points=kept)


# --- .trail.jsonl file format -------------------------------------------------
# One record per line: {"lat": <float>, "lon": <float>, "ts": <int ms>}, sorted
# by ts. This format is shared with the CLI and the redaction console.


def trail_point_to_record(p: TrailPoint) -> dict:
    return {"lat": p.position.lat, "lon": p.position.lon, "ts": p.timestamp_ms}


def trail_point_from_record(rec: dict) -> TrailPoint:
    return TrailPoint(
        position=GeoPoint(lat=float(rec["lat"]), lon=float(rec["lon"])),
        timestamp_ms=int(rec["ts"]),
    )


def dump_trail(trail: LocationTrail) -> str:
    return "".join(json.dumps(trail_point_to_record(p)) + "\n" for p in trail.points)


def parse_trail(text: str, owner_id: str, source: str = "<string>") -> LocationTrail:
    points = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            points.append(trail_point_from_record(rec))
        except (ValueError, KeyError, TypeError) as exc:
            raise TrailParseError(source, line_no, str(exc)) from exc
    try:
        return LocationTrail(owner_id=owner_id, points=tuple(points))
    except ValueError as exc:
        raise TrailParseError(source, len(points), str(exc)) from exc


def load_trail(path: str | Path, owner_id: str | None = None) -> LocationTrail:
    path = Path(path)
    owner = owner_id if owner_id is not None else path.name.split(".")[0]
    return parse_trail(path.read_text(), owner_id=owner, source=str(path))


def save_trail(trail: LocationTrail, path: str | Path) -> None:
    Path(path).write_text(dump_trail(trail))
