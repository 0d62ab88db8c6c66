"""The user-side agent.

The client logs its own trail, pulls published carrier payloads, and matches
strictly locally. The only bytes it ever sends are the sync cursor and page
size; exposure computation, reports, and the trail itself never leave the
device. Sharing the trail with an authority is a separate, consent-gated
export that produces a file — it is not a network path.

State directory layout (human-inspectable, stable):
    state/trail.jsonl   — the device's own trail, one point per line
    state/cursor        — JSON: sync cursor, cache generation, consent
    state/cache/gen<k>/ — one JSON file per cached carrier payload
"""

from __future__ import annotations

import http.client
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol
from urllib.parse import urlparse

from .matching import (
    ExposureEvent,
    MatchParams,
    exposure_risk_score,
    match_tokens,
    user_token_index,
)
from .publication import CarrierPayload, SyncCursor, UpdatePage
from .trail import (
    GeoCell,
    LocationTrail,
    RetentionPolicy,
    TrailPoint,
    dump_trail,
    geo_cell_of,
    purge_older_than,
    trail_point_from_record,
    trail_point_to_record,
)

DEFAULT_PAGE_SIZE = 100


class ClientError(Exception):
    code = "CLIENT_ERROR"


class NonMonotonicTime(ClientError):
    code = "NON_MONOTONIC_TIME"


class ConsentWithheld(ClientError):
    code = "CONSENT_WITHHELD"


class NetworkError(ClientError):
    code = "NETWORK"


@dataclass(frozen=True, slots=True)
class Consent:
    share_with_authority: bool = False


@dataclass(frozen=True, slots=True)
class ClientState:
    trail: LocationTrail
    cursor: SyncCursor = SyncCursor(0)
    carrier_cache: tuple[CarrierPayload, ...] = ()
    consent: Consent = Consent()
    retention: RetentionPolicy = RetentionPolicy()
    cache_gen: int = 0

    @classmethod
    def fresh(
        cls, owner_id: str = "device", retention: RetentionPolicy = RetentionPolicy()
    ) -> "ClientState":
        return cls(trail=LocationTrail(owner_id=owner_id, points=()), retention=retention)


@dataclass(frozen=True, slots=True)
class ExposureReport:
    events: tuple[ExposureEvent, ...]
    score: float
    window_start_ms: int
    window_end_ms: int
    guidance_text: str

    def to_record(self) -> dict:
        return {
            "score": self.score,
            "window": [self.window_start_ms, self.window_end_ms],
            "events": [
                {
                    "ts": e.user_point.timestamp_ms,
                    "lat": e.user_point.position.lat,
                    "lon": e.user_point.position.lon,
                    "carrier": e.carrier_trail_id,
                    "distance_m": e.distance_m,
                    "time_gap_s": e.time_gap_s,
                }
                for e in self.events
            ],
            "guidance": self.guidance_text,
        }


class Transport(Protocol):
    """The client's entire view of the network: cursor in, payload page out."""

    def get_updates(self, since: int, page_size: int) -> UpdatePage: ...


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def get_updates(self, since: int, page_size: int) -> UpdatePage:
        parsed = urlparse(self.base_url)
        path = f"/v1/updates?since={int(since)}&page_size={int(page_size)}"
        try:
            conn = http.client.HTTPConnection(parsed.hostname, parsed.port, timeout=self.timeout)
            try:
                conn.request("GET", path)
                resp = conn.getresponse()
                body = resp.read()
            finally:
                conn.close()
        except OSError as exc:
            raise NetworkError(f"GET {path}: {exc}") from exc
        if resp.status != 200:
            raise NetworkError(f"GET {path}: HTTP {resp.status}")
        data = json.loads(body.decode())
        return UpdatePage(
            entries=tuple(
                (int(item["cursor"]), CarrierPayload.from_record(item["record"]))
                for item in data["payloads"]
            ),
            next=SyncCursor(int(data["next"])),
            snapshot_reset=bool(data["snapshot_reset"]),
        )


class LocalTransport:
    """In-process transport for tests and embedded use."""

    def __init__(self, service):
        self.service = service

    def get_updates(self, since: int, page_size: int) -> UpdatePage:
        return self.service.get_updates(since, page_size)


# --- pure state transitions ---------------------------------------------------


def log_point(state: ClientState, p: TrailPoint) -> ClientState:
    """Append the device's own fix; retention purge runs on every write."""
    points = state.trail.points
    if points and p.timestamp_ms <= points[-1].timestamp_ms:
        raise NonMonotonicTime(
            f"timestamp {p.timestamp_ms} does not advance past {points[-1].timestamp_ms}"
        )
    trail = LocationTrail(owner_id=state.trail.owner_id, points=points + (p,))
    trail = purge_older_than(trail, state.retention, now_ms=p.timestamp_ms)
    return replace(state, trail=trail)


@dataclass(frozen=True)
class PullResult:
    cursor: int
    cache_gen: int
    added: tuple[tuple[int, CarrierPayload], ...]
    reset: bool


def pull_updates(
    cursor: int, cache_gen: int, transport: Transport, page_size: int = DEFAULT_PAGE_SIZE
) -> PullResult:
    """Page through everything past the cursor; restart from zero on reset."""
    added: list[tuple[int, CarrierPayload]] = []
    reset = False
    while True:
        page = transport.get_updates(cursor, page_size)
        if page.snapshot_reset and not reset:
            # Server purged behind us: our cache may hold deleted payloads.
            reset = True
            added = []
            if cursor != 0:
                cursor = 0
                continue
        added.extend(page.entries)
        if page.next.value == cursor:
            break
        cursor = page.next.value
    return PullResult(
        cursor=cursor,
        cache_gen=cache_gen + 1 if reset else cache_gen,
        added=tuple(added),
        reset=reset,
    )


def _match_token_payload(trail: LocationTrail, payload: CarrierPayload) -> list[ExposureEvent]:
    grid = payload.grid
    index = user_token_index(trail, grid, payload.salt_epoch)
    hits = match_tokens(frozenset(index), payload.tokens)
    events = []
    seen_ts: set[int] = set()
    for token in sorted(hits):
        for point in index[token]:
            if point.timestamp_ms in seen_ts:
                continue
            seen_ts.add(point.timestamp_ms)
            # Cell-level pseudo-event: distance/gap are grid-resolution
            # stand-ins (half a cell, half a bucket), not measured values,
            # capped at the grid's own contact thresholds.
            events.append(
                ExposureEvent(
                    user_point=point,
                    carrier_trail_id=payload.payload_id,
                    distance_m=min(grid.cell_size_m / 2.0, grid.d_max_m),
                    time_gap_s=min(grid.bucket_len_s / 2.0, grid.dt_max_s),
                )
            )
    return events


def _match_cells_payload(
    trail: LocationTrail, payload: CarrierPayload, p: MatchParams
) -> list[ExposureEvent]:
    published = set(payload.cells)
    matched_cells: set[GeoCell] = set()
    events = []
    for point in trail.points:
        if not payload.window_start_ms <= point.timestamp_ms <= payload.window_end_ms:
            continue
        cell = geo_cell_of(point.position, payload.cell_size_m)
        if cell in published and cell not in matched_cells:
            matched_cells.add(cell)
            # Broadcast-tier overlap: 100 m cells carry no proximity claim, so
            # the event is capped at the thresholds and carries zero risk weight.
            events.append(
                ExposureEvent(
                    user_point=point,
                    carrier_trail_id=payload.payload_id,
                    distance_m=p.d_max_m,
                    time_gap_s=p.dt_max_s,
                )
            )
    return events


def build_report(state: ClientState, p: MatchParams, now_ms: int) -> ExposureReport:
    """Match the local trail against the cached payloads; purely local."""
    events: list[ExposureEvent] = []
    for payload in state.carrier_cache:
        if payload.kind == "tokens":
            events.extend(_match_token_payload(state.trail, payload))
        else:
            events.extend(_match_cells_payload(state.trail, payload, p))
    events.sort(key=lambda e: (e.user_point.timestamp_ms, e.carrier_trail_id))
    score = exposure_risk_score(events, p)

    retention_start = now_ms - state.retention.retention_ms
    if events:
        window = (
            max(retention_start, min(e.user_point.timestamp_ms for e in events)),
            min(now_ms, max(e.user_point.timestamp_ms for e in events)),
        )
    else:
        window = (retention_start, now_ms)
    guidance = _guidance_text(len(events), score, window, p)
    return ExposureReport(
        events=tuple(events),
        score=score,
        window_start_ms=window[0],
        window_end_ms=window[1],
        guidance_text=guidance,
    )


def _guidance_text(n_events: int, score: float, window: tuple[int, int], p: MatchParams) -> str:
    days = (window[1] - window[0]) / 86_400_000
    if n_events == 0:
        return (
            f"No recorded crossings with published carrier data in the last "
            f"{days:.1f} days. This reflects only published, redacted trails; "
            f"absence of a match is not a guarantee of absence of exposure."
        )
    return (
        f"{n_events} space-time crossing(s) with published carrier data in a "
        f"{days:.1f}-day window, matched at {p.cell_size_m:.0f} m / "
        f"{p.bucket_len_s:.0f} s resolution (composite risk {score:.2f}). A "
        f"crossing means shared space and time at that resolution, not "
        f"confirmed transmission; consider your symptoms and consult your "
        f"doctor before acting."
    )


def sync_and_match(
    state: ClientState,
    transport: Transport,
    p: MatchParams,
    now_ms: int,
    page_size: int = DEFAULT_PAGE_SIZE,
) -> tuple[ClientState, ExposureReport]:
    """Pull new payloads (only the cursor goes upstream), then match locally.

    On snapshot_reset the carrier cache is discarded and replication restarts
    from zero — that is how server-side deletion propagates to devices. On
    network failure the exception propagates and the input state stays valid;
    nothing here mutates it.
    """
    result = pull_updates(state.cursor.value, state.cache_gen, transport, page_size)
    base = () if result.reset else state.carrier_cache
    new_state = replace(
        state,
        cursor=SyncCursor(result.cursor),
        carrier_cache=base + tuple(p_ for _, p_ in result.added),
        cache_gen=result.cache_gen,
    )
    report = build_report(new_state, p, now_ms=now_ms)
    return new_state, report


def export_for_authority(state: ClientState, now_ms: int) -> LocationTrail:
    """Consent-gated export of the unredacted retention-window trail."""
    if not state.consent.share_with_authority:
        raise ConsentWithheld("user has not consented to share the trail")
    return purge_older_than(state.trail, state.retention, now_ms=now_ms)


# --- persistence ----------------------------------------------------------------


class ClientStore:
    """Crash-consistent state directory.

    Payload files are staged before the cursor file is replaced; the cursor
    rename is the commit point. On load, cache entries beyond the committed
    cursor or from another generation are ignored, so an interrupted sync is
    indistinguishable from one that never started.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "cache").mkdir(parents=True, exist_ok=True)
        self.trail_path = self.root / "trail.jsonl"
        self.cursor_path = self.root / "cursor"

    def load(
        self,
        owner_id: str = "device",
        retention: RetentionPolicy = RetentionPolicy(),
    ) -> ClientState:
        cursor = 0
        gen = 0
        consent = Consent()
        if self.cursor_path.exists():
            meta = json.loads(self.cursor_path.read_text())
            cursor = int(meta.get("cursor", 0))
            gen = int(meta.get("gen", 0))
            consent = Consent(share_with_authority=bool(meta.get("consent", False)))

        points = []
        if self.trail_path.exists():
            for line in self.trail_path.read_text().splitlines():
                if line.strip():
                    points.append(trail_point_from_record(json.loads(line)))
        trail = LocationTrail(owner_id=owner_id, points=tuple(points))

        cache: list[tuple[int, CarrierPayload]] = []
        gen_dir = self.root / "cache" / f"gen{gen}"
        if gen_dir.exists():
            for path in sorted(gen_dir.glob("payload_*.json")):
                entry = json.loads(path.read_text())
                if int(entry["cursor"]) <= cursor:
                    cache.append((int(entry["cursor"]), CarrierPayload.from_record(entry["record"])))
        cache.sort(key=lambda e: e[0])
        return ClientState(
            trail=trail,
            cursor=SyncCursor(cursor),
            carrier_cache=tuple(p for _, p in cache),
            consent=consent,
            retention=retention,
            cache_gen=gen,
        )

    def append_point(self, p: TrailPoint) -> None:
        with open(self.trail_path, "a") as fh:
            fh.write(json.dumps(trail_point_to_record(p)) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def rewrite_trail(self, state: ClientState) -> None:
        tmp = self.trail_path.with_suffix(".tmp")
        tmp.write_text(dump_trail(state.trail))
        os.replace(tmp, self.trail_path)

    def stage_payloads(self, gen: int, entries: tuple[tuple[int, CarrierPayload], ...]) -> None:
        gen_dir = self.root / "cache" / f"gen{gen}"
        gen_dir.mkdir(parents=True, exist_ok=True)
        for cursor, payload in entries:
            path = gen_dir / f"payload_{cursor:012d}.json"
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps({"cursor": cursor, "record": payload.to_record()}))
            os.replace(tmp, path)

    def commit(self, state: ClientState) -> None:
        tmp = self.cursor_path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(
                {
                    "cursor": state.cursor.value,
                    "gen": state.cache_gen,
                    "consent": state.consent.share_with_authority,
                }
            )
        )
        os.replace(tmp, self.cursor_path)
        self._gc_generations(keep_gen=state.cache_gen)

    def _gc_generations(self, keep_gen: int) -> None:
        cache_dir = self.root / "cache"
        for child in cache_dir.iterdir():
            if child.is_dir() and child.name != f"gen{keep_gen}":
                for f in child.iterdir():
                    f.unlink()
                child.rmdir()


class SafePathsClient:
    """Facade wiring the pure transitions to a state directory and a transport."""

    def __init__(
        self,
        state_dir: str | Path,
        transport: Transport | None = None,
        params: MatchParams = MatchParams(),
        retention: RetentionPolicy = RetentionPolicy(),
        owner_id: str = "device",
    ):
        self.store = ClientStore(state_dir)
        self.transport = transport
        self.params = params
        self.state = self.store.load(owner_id=owner_id, retention=retention)

    def log(self, p: TrailPoint) -> None:
        before = len(self.state.trail.points)
        self.state = log_point(self.state, p)
        if len(self.state.trail.points) == before + 1:
            self.store.append_point(p)
        else:  # retention purge dropped old points; rewrite the journal
            self.store.rewrite_trail(self.state)

    def sync(self, now_ms: int, page_size: int = DEFAULT_PAGE_SIZE) -> ExposureReport:
        if self.transport is None:
            raise NetworkError("no transport configured")
        result = pull_updates(self.state.cursor.value, self.state.cache_gen, self.transport, page_size)
        base = () if result.reset else self.state.carrier_cache
        new_state = replace(
            self.state,
            cursor=SyncCursor(result.cursor),
            carrier_cache=base + tuple(p for _, p in result.added),
            cache_gen=result.cache_gen,
        )
        self.store.stage_payloads(result.cache_gen, result.added)
        self.store.commit(new_state)
        self.state = new_state
        return build_report(new_state, self.params, now_ms=now_ms)

    def report(self, now_ms: int) -> ExposureReport:
        return build_report(self.state, self.params, now_ms=now_ms)

    def set_consent(self, share: bool) -> None:
        self.state = replace(self.state, consent=Consent(share_with_authority=share))
        self.store.commit(self.state)

    def export(self, now_ms: int) -> LocationTrail:
        return export_for_authority(self.state, now_ms=now_ms)
