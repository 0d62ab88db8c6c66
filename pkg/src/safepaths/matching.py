"""Spatio-temporal crossing detection between user and carrier trails.

Three routes to the same question ("did these paths cross?"):

* brute_force_exposures — the quadratic oracle, kept deliberately simple;
* indexed_exposures — a (cell, bucket) hash index that must reproduce the
  oracle's output exactly;
* hashed tokens — the privacy-preserving route: both sides hash their
  occupied space-time cells under a shared salt and intersect digests, so
  neither side reveals raw coordinates.

Grid caveat: cell columns scale with cos(lat), so the one-cell neighbor
expansion used by the token route is only gap-free when
cell_size_m >= d_max_m * (1 + |lon_rad|*sin|lat|) at the operating location.
Near the projection origin the defaults (10 m cells for a 10 m threshold)
satisfy this. The indexed route widens its probe window adaptively instead,
so it is exact everywhere away from the ±180° seam.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

from .trail import LocationTrail, TrailPoint, haversine_distance, quantize

DEFAULT_D_MAX_M = 10.0
DEFAULT_DT_MAX_S = 300
RISK_TIME_SCALE_S = 900.0  # 15 min of close contact ~ 0.63 risk weight

SALT_EPOCH_LEN = 16
TOKEN_LEN = 32


@dataclass(frozen=True, slots=True)
class MatchParams:
    """Thresholds defining a "contact" plus the grid used to find candidates.

    The proximity thresholds are configuration, not epidemiology: 10 m bounds
    droplet-plausible proximity while tolerating GPS error, 300 s bounds
    co-presence between fixes.
    """

    d_max_m: float = DEFAULT_D_MAX_M
    dt_max_s: float = DEFAULT_DT_MAX_S
    cell_size_m: float = DEFAULT_D_MAX_M
    bucket_len_s: int = DEFAULT_DT_MAX_S

    def __post_init__(self):
        if min(self.d_max_m, self.dt_max_s, self.cell_size_m, self.bucket_len_s) <= 0:
            raise ValueError("all match parameters must be > 0")


@dataclass(frozen=True, slots=True)
class ExposureEvent:
    user_point: TrailPoint
    carrier_trail_id: str
    distance_m: float
    time_gap_s: float


def _event_sort_key(e: ExposureEvent):
    return (e.user_point.timestamp_ms, e.carrier_trail_id, e.time_gap_s, e.distance_m)


def brute_force_exposures(
    user: LocationTrail,
    carriers: list[tuple[str, LocationTrail]],
    p: MatchParams,
) -> list[ExposureEvent]:
    """All (user point, carrier point) pairs within both thresholds. The oracle."""
    events = []
    for cid, carrier in carriers:
        for up in user.points:
            for cp in carrier.points:
                gap_s = abs(up.timestamp_ms - cp.timestamp_ms) / 1000.0
                if gap_s > p.dt_max_s:
                    continue
                d = haversine_distance(up.position, cp.position)
                if d <= p.d_max_m:
                    events.append(
                        ExposureEvent(
                            user_point=up, carrier_trail_id=cid, distance_m=d, time_gap_s=gap_s
                        )
                    )
    events.sort(key=_event_sort_key)
    return events


def _east_scale_slack(point: TrailPoint) -> float:
    # Column indices scale with cos(lat); a north displacement of d meters can
    # shift the projected east offset by up to d * |lon_rad| * sin|lat|.
    return abs(math.radians(point.position.lon)) * abs(math.sin(math.radians(point.position.lat)))


def indexed_exposures(
    user: LocationTrail,
    carriers: list[tuple[str, LocationTrail]],
    p: MatchParams,
) -> list[ExposureEvent]:
    """Same output as brute_force_exposures via a (cell, bucket) hash index.

    Probe window: +/-ceil(d_max/cell) rows, +/-ceil(dt_max/bucket) buckets, and
    columns widened by the east-scale slack of the query point so the window
    covers every candidate the oracle would accept (3x3 cells at the defaults
    near the projection origin). Candidates are then filtered exactly.
    """
    index: dict[tuple[int, int, int], list[tuple[str, TrailPoint]]] = {}
    for cid, carrier in carriers:
        for cp in carrier.points:
            cell, bucket = quantize(cp, p.cell_size_m, p.bucket_len_s)
            index.setdefault((cell.row, cell.col, bucket.index), []).append((cid, cp))

    row_radius = math.ceil(p.d_max_m / p.cell_size_m)
    bucket_radius = math.ceil(p.dt_max_s / p.bucket_len_s)

    events = []
    for up in user.points:
        cell, bucket = quantize(up, p.cell_size_m, p.bucket_len_s)
        col_radius = math.ceil(p.d_max_m * (1.0 + _east_scale_slack(up)) / p.cell_size_m)
        for dr in range(-row_radius, row_radius + 1):
            for dc in range(-col_radius, col_radius + 1):
                for db in range(-bucket_radius, bucket_radius + 1):
                    for cid, cp in index.get((cell.row + dr, cell.col + dc, bucket.index + db), ()):
                        gap_s = abs(up.timestamp_ms - cp.timestamp_ms) / 1000.0
                        if gap_s > p.dt_max_s:
                            continue
                        d = haversine_distance(up.position, cp.position)
                        if d <= p.d_max_m:
                            events.append(
                                ExposureEvent(
                                    user_point=up,
                                    carrier_trail_id=cid,
                                    distance_m=d,
                                    time_gap_s=gap_s,
                                )
                            )
    events.sort(key=_event_sort_key)
    return events


def space_time_token(salt_epoch: bytes, row: int, col: int, bucket_index: int) -> bytes:
    """32-byte digest of one space-time cell under the publication epoch's salt."""
    return hashlib.sha256(salt_epoch + struct.pack(">qqq", row, col, bucket_index)).digest()


def hash_tokens(
    trail: LocationTrail,
    p: MatchParams,
    salt_epoch: bytes,
    expand_neighbors: bool = False,
) -> frozenset[bytes]:
    """One token per occupied (cell, bucket); carriers expand to the 3x3x3 hull.

    Neighbor expansion happens on the published carrier side only, so a user's
    own token set stays minimal and never needs to leave the device.
    """
    if not salt_epoch:
        raise ValueError("salt_epoch must be non-empty")
    offsets = (-1, 0, 1) if expand_neighbors else (0,)
    tokens = set()
    for point in trail.points:
        cell, bucket = quantize(point, p.cell_size_m, p.bucket_len_s)
        for dr in offsets:
            for dc in offsets:
                for db in offsets:
                    tokens.add(space_time_token(salt_epoch, cell.row + dr, cell.col + dc, bucket.index + db))
    return frozenset(tokens)


def user_token_index(
    trail: LocationTrail, p: MatchParams, salt_epoch: bytes
) -> dict[bytes, list[TrailPoint]]:
    """Unexpanded user tokens mapped back to the points that produced them."""
    if not salt_epoch:
        raise ValueError("salt_epoch must be non-empty")
    index: dict[bytes, list[TrailPoint]] = {}
    for point in trail.points:
        cell, bucket = quantize(point, p.cell_size_m, p.bucket_len_s)
        index.setdefault(space_time_token(salt_epoch, cell.row, cell.col, bucket.index), []).append(point)
    return index


def match_tokens(user_tokens: frozenset[bytes], carrier_tokens: frozenset[bytes]) -> frozenset[bytes]:
    """Digest intersection: a superset of true exposures at grid resolution."""
    return frozenset(user_tokens) & frozenset(carrier_tokens)


def exposure_risk_score(events: list[ExposureEvent], p: MatchParams) -> float:
    """Saturating risk in [0, 1]: 1 - exp(-sum of distance-weighted dwell).

    Each event contributes weight max(0, 1 - d/d_max) for one bucket length of
    co-presence, scaled by a 900 s time constant, so repeated crossings
    asymptote to 1 instead of exceeding it.
    """
    total = 0.0
    for e in events:
        weight = max(0.0, 1.0 - e.distance_m / p.d_max_m)
        total += weight * p.bucket_len_s / RISK_TIME_SCALE_S
    return 1.0 - math.exp(-total)


# --- token set file format ------------------------------------------------------
# 16-byte salt_epoch header, then per token a 4-byte big-endian length prefix
# (always 32) followed by the digest. Tokens are written sorted so the file is
# bit-exact across platforms.


def write_token_file(path: str | Path, salt_epoch: bytes, tokens: frozenset[bytes]) -> None:
    if len(salt_epoch) != SALT_EPOCH_LEN:
        raise ValueError(f"salt_epoch must be exactly {SALT_EPOCH_LEN} bytes")
    with open(path, "wb") as fh:
        fh.write(salt_epoch)
        for token in sorted(tokens):
            if len(token) != TOKEN_LEN:
                raise ValueError(f"token must be exactly {TOKEN_LEN} bytes")
            fh.write(struct.pack(">I", TOKEN_LEN))
            fh.write(token)


def read_token_file(path: str | Path) -> tuple[bytes, frozenset[bytes]]:
    blob = Path(path).read_bytes()
    if len(blob) < SALT_EPOCH_LEN:
        raise ValueError("token file shorter than its salt header")
    salt, body = blob[:SALT_EPOCH_LEN], blob[SALT_EPOCH_LEN:]
    tokens = set()
    offset = 0
    while offset < len(body):
        if offset + 4 > len(body):
            raise ValueError("truncated token record length")
        (rec_len,) = struct.unpack_from(">I", body, offset)
        offset += 4
        if rec_len != TOKEN_LEN or offset + rec_len > len(body):
            raise ValueError("malformed token record")
        tokens.add(body[offset : offset + rec_len])
        offset += rec_len
    return salt, frozenset(tokens)
