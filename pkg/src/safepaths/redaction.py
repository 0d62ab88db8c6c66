"""Carrier-trail redaction: dwell-cluster detection, point removal, risk scoring.

A diagnosed carrier's raw trail is never published directly. It passes through
automatic dwell-anchor removal (homes, workplaces) and any number of manual
official redactions, producing a RedactedTrail whose audit log is itself safe
to publish: it records what was removed and why, never where.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .trail import (
    GeoCell,
    GeoPoint,
    LocationTrail,
    TrailParseError,
    TrailPoint,
    coarsen,
    dump_trail,
    geo_cell_of,
    haversine_distance,
)

DEFAULT_DWELL_RADIUS_M = 50.0
DEFAULT_MIN_DWELL_S = 45 * 60
DEFAULT_TOP_K_CLUSTERS = 2


@dataclass(frozen=True, slots=True)
class DwellCluster:
    """A spatial anchor where the trail lingered (home/workplace proxy)."""

    centroid: GeoPoint
    radius_m: float
    total_dwell_s: float
    visit_count: int


@dataclass(frozen=True, slots=True)
class CircleRedaction:
    center: GeoPoint
    radius_m: float
    reason: str = ""
    kind = "circle"

    def __post_init__(self):
        if self.radius_m <= 0:
            raise ValueError("radius_m must be > 0")

    def matches(self, p: TrailPoint) -> bool:
        return haversine_distance(self.center, p.position) <= self.radius_m


@dataclass(frozen=True, slots=True)
class TimeRangeRedaction:
    """Removes points with start_ms <= ts < end_ms."""

    start_ms: int
    end_ms: int
    reason: str = ""
    kind = "time_range"

    def __post_init__(self):
        if self.start_ms >= self.end_ms:
            raise ValueError("start must be < end")

    def matches(self, p: TrailPoint) -> bool:
        return self.start_ms <= p.timestamp_ms < self.end_ms


@dataclass(frozen=True, slots=True)
class CellRedaction:
    cell: GeoCell
    reason: str = ""
    kind = "cell"

    def matches(self, p: TrailPoint) -> bool:
        return geo_cell_of(p.position, self.cell.cell_size_m) == self.cell


RedactionOp = CircleRedaction | TimeRangeRedaction | CellRedaction


@dataclass(frozen=True, slots=True)
class RedactedTrail:
    """Publishable remainder of a trail plus an audit log of the removals.

    The kept points and the removed points partition the original trail; the
    log stores per-op removal counts (each removed point is attributed to the
    first op that matched it), never the removed coordinates.
    """

    kept: LocationTrail
    redaction_log: tuple[tuple[RedactionOp, int], ...]
    source_hash: str

    @property
    def removed_count(self) -> int:
        return sum(n for _, n in self.redaction_log)


def trail_digest(trail: LocationTrail) -> str:
    return hashlib.sha256(dump_trail(trail).encode()).hexdigest()


def _centroid(lat_sum: float, lon_sum: float, n: int) -> GeoPoint:
    return GeoPoint(lat=lat_sum / n, lon=lon_sum / n)


def detect_dwell_clusters(
    trail: LocationTrail, radius_m: float, min_duration_s: float
) -> list[DwellCluster]:
    """Find places where the trail lingered.

    Greedy sweep: consecutive points staying within radius_m of the running
    centroid and spanning at least min_duration_s form one visit. Visits whose
    centroids fall within radius_m of each other are merged into a single
    cluster (a home revisited nightly is one cluster, not one per night).
    Result is sorted by total dwell time, longest first.
    """
    if radius_m <= 0 or min_duration_s <= 0:
        raise ValueError("radius_m and min_duration_s must be > 0")

    visits: list[tuple[GeoPoint, float]] = []  # (centroid, dwell seconds)
    run: list[TrailPoint] = []
    lat_sum = lon_sum = 0.0

    def close_run():
        nonlocal run, lat_sum, lon_sum
        if run:
            span_s = (run[-1].timestamp_ms - run[0].timestamp_ms) / 1000.0
            if span_s >= min_duration_s:
                visits.append((_centroid(lat_sum, lon_sum, len(run)), span_s))
        run = []
        lat_sum = lon_sum = 0.0

    for p in trail.points:
        if run:
            centroid = _centroid(lat_sum, lon_sum, len(run))
            if haversine_distance(centroid, p.position) > radius_m:
                close_run()
        run.append(p)
        lat_sum += p.position.lat
        lon_sum += p.position.lon
    close_run()

    # Merge visits that re-occupy the same anchor.
    merged: list[list] = []  # [lat_sum*w, lon_sum*w, dwell, visit_count]
    for centroid, dwell in visits:
        for m in merged:
            existing = GeoPoint(lat=m[0] / m[2], lon=m[1] / m[2])
            if haversine_distance(existing, centroid) <= radius_m:
                m[0] += centroid.lat * dwell
                m[1] += centroid.lon * dwell
                m[2] += dwell
                m[3] += 1
                break
        else:
            merged.append([centroid.lat * dwell, centroid.lon * dwell, dwell, 1])

    clusters = [
        DwellCluster(
            centroid=GeoPoint(lat=m[0] / m[2], lon=m[1] / m[2]),
            radius_m=radius_m,
            total_dwell_s=m[2],
            visit_count=m[3],
        )
        for m in merged
    ]
    clusters.sort(key=lambda c: (-c.total_dwell_s, -c.visit_count, c.centroid.lat, c.centroid.lon))
    return clusters


def apply_manual_redactions(trail: LocationTrail, ops: list[RedactionOp]) -> RedactedTrail:
    """Remove exactly the points matched by any op; idempotent."""
    counts = [0] * len(ops)
    kept: list[TrailPoint] = []
    for p in trail.points:
        for i, op in enumerate(ops):
            if op.matches(p):
                counts[i] += 1
                break
        else:
            kept.append(p)
    return RedactedTrail(
        kept=LocationTrail(owner_id=trail.owner_id, points=tuple(kept)),
        redaction_log=tuple(zip(tuple(ops), counts)),
        source_hash=trail_digest(trail),
    )


@dataclass(frozen=True, slots=True)
class DwellPolicy:
    dwell_radius_m: float = DEFAULT_DWELL_RADIUS_M
    min_dwell_s: float = DEFAULT_MIN_DWELL_S
    top_k_clusters: int = DEFAULT_TOP_K_CLUSTERS


def auto_redact(trail: LocationTrail, policy: DwellPolicy = DwellPolicy()) -> RedactedTrail:
    """Remove every point within dwell_radius_m of the top-k dwell anchors."""
    ops: list[RedactionOp] = []
    if policy.top_k_clusters > 0 and len(trail) > 0:
        clusters = detect_dwell_clusters(trail, policy.dwell_radius_m, policy.min_dwell_s)
        for rank, cluster in enumerate(clusters[: policy.top_k_clusters], start=1):
            ops.append(
                CircleRedaction(
                    center=cluster.centroid,
                    radius_m=policy.dwell_radius_m,
                    reason=f"auto dwell anchor #{rank} ({cluster.total_dwell_s / 3600.0:.1f} h)",
                )
            )
    return apply_manual_redactions(trail, ops)


def reidentification_risk(
    redacted: RedactedTrail,
    background: list[LocationTrail],
    k: int,
    cell_size_m: float,
) -> float:
    """Fraction of the published coarse cells visited by fewer than k background trails.

    Higher is riskier: a cell nobody else visits pins the trail to its owner.
    An empty published trail scores 0 (nothing released, nothing to match).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    cells = coarsen(redacted.kept, cell_size_m)
    if not cells:
        return 0.0
    bg_cells = [set(coarsen(t, cell_size_m)) for t in background]
    risky = sum(1 for c in cells if sum(1 for bg in bg_cells if c in bg) < k)
    return risky / len(cells)


# --- redaction ops file format -------------------------------------------------
# One op per line:
#   {"kind": "circle", "lat": <f>, "lon": <f>, "radius_m": <f>, "reason": <s>}
#   {"kind": "time_range", "start_ms": <int>, "end_ms": <int>, "reason": <s>}
#   {"kind": "cell", "row": <int>, "col": <int>, "cell_size_m": <f>, "reason": <s>}


def redaction_op_to_record(op: RedactionOp) -> dict:
    if isinstance(op, CircleRedaction):
        return {
            "kind": "circle",
            "lat": op.center.lat,
            "lon": op.center.lon,
            "radius_m": op.radius_m,
            "reason": op.reason,
        }
    if isinstance(op, TimeRangeRedaction):
        return {"kind": "time_range", "start_ms": op.start_ms, "end_ms": op.end_ms, "reason": op.reason}
    if isinstance(op, CellRedaction):
        return {
            "kind": "cell",
            "row": op.cell.row,
            "col": op.cell.col,
            "cell_size_m": op.cell.cell_size_m,
            "reason": op.reason,
        }
    raise TypeError(f"unknown op type: {type(op)!r}")


def redaction_op_from_record(rec: dict) -> RedactionOp:
    kind = rec.get("kind")
    reason = str(rec.get("reason", ""))
    if kind == "circle":
        return CircleRedaction(
            center=GeoPoint(lat=float(rec["lat"]), lon=float(rec["lon"])),
            radius_m=float(rec["radius_m"]),
            reason=reason,
        )
    if kind == "time_range":
        return TimeRangeRedaction(start_ms=int(rec["start_ms"]), end_ms=int(rec["end_ms"]), reason=reason)
    if kind == "cell":
        return CellRedaction(
            cell=GeoCell(row=int(rec["row"]), col=int(rec["col"]), cell_size_m=float(rec["cell_size_m"])),
            reason=reason,
        )
    raise ValueError(f"unknown redaction kind: {kind!r}")


def load_redaction_ops(path: str | Path) -> list[RedactionOp]:
    path = Path(path)
    ops = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            ops.append(redaction_op_from_record(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise TrailParseError(str(path), line_no, str(exc)) from exc
    return ops


def save_redaction_log(redacted: RedactedTrail, path: str | Path) -> None:
    """Write the publishable audit log: op kind, reason, and removal count only.

    Geometry stays out on purpose — a circle op's center is usually the very
    anchor being protected. The full ops live in the authority-side ops file.
    """
    lines = []
    for op, removed in redacted.redaction_log:
        lines.append(json.dumps({"kind": op.kind, "reason": op.reason, "removed": removed}))
    Path(path).write_text("".join(line + "\n" for line in lines))
