"""The central pull-model publication service.

Authorities publish redacted carrier payloads into a single-writer append log;
clients replicate by polling a monotone cursor. The service never accepts user
location data — its only ingestion route is authority-credentialed carrier
publication, and reads need no credential at all.

Deletion propagates through the purge horizon: any client whose cursor
predates the last effective purge is told to drop its local cache and resync
from zero, so purged payloads cannot survive anywhere downstream.
"""

from __future__ import annotations

import hmac
import json
import os
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .matching import MatchParams, SALT_EPOCH_LEN, TOKEN_LEN, hash_tokens
from .redaction import RedactedTrail
from .trail import GeoCell, RetentionPolicy, coarsen

COARSE_CELL_SIZE_M = 100.0  # broadcast-tier resolution
PUBLISH_CLOCK_SKEW_MS = 10 * 60 * 1000
MAX_PAGE_SIZE = 1000


class PublicationError(Exception):
    code = "PUBLICATION_ERROR"


class AuthFailed(PublicationError):
    code = "AUTH_FAILED"


class RetentionViolation(PublicationError):
    code = "RETENTION_VIOLATION"


class Malformed(PublicationError):
    code = "MALFORMED"


@dataclass(frozen=True, slots=True)
class SyncCursor:
    value: int = 0

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("cursor must be >= 0")


@dataclass(frozen=True, slots=True)
class AuthorityCredential:
    token: str


def new_salt_epoch() -> bytes:
    return secrets.token_bytes(SALT_EPOCH_LEN)


@dataclass(frozen=True, slots=True)
class CarrierPayload:
    """One published unit of carrier data.

    body is tier-specific: the broadcast tier carries deduplicated 100 m cells,
    the matching tier carries salted space-time tokens plus the grid they were
    hashed on. Both tiers of one carrier derive from the same redacted trail.
    """

    payload_id: str
    epoch: int
    salt_epoch: bytes
    kind: str  # "cells" | "tokens"
    published_at_ms: int
    window_start_ms: int
    window_end_ms: int
    cells: tuple[GeoCell, ...] = ()
    cell_size_m: float = COARSE_CELL_SIZE_M
    tokens: frozenset[bytes] = frozenset()
    grid: MatchParams | None = None

    def __post_init__(self):
        if self.kind not in ("cells", "tokens"):
            raise ValueError(f"unknown payload kind: {self.kind!r}")
        if self.window_end_ms < self.window_start_ms:
            raise ValueError("contagion window end precedes start")
        if self.kind == "cells" and not self.cells:
            raise ValueError("cells payload must carry at least one cell")
        if self.kind == "tokens":
            if not self.tokens:
                raise ValueError("tokens payload must carry at least one token")
            if self.grid is None:
                raise ValueError("tokens payload must carry its grid parameters")
        if len(self.salt_epoch) != SALT_EPOCH_LEN:
            raise ValueError(f"salt_epoch must be {SALT_EPOCH_LEN} bytes")

    def to_record(self) -> dict:
        rec = {
            "payload_id": self.payload_id,
            "epoch": self.epoch,
            "salt_epoch": self.salt_epoch.hex(),
            "kind": self.kind,
            "published_at_ms": self.published_at_ms,
            "window": [self.window_start_ms, self.window_end_ms],
        }
        if self.kind == "cells":
            rec["cell_size_m"] = self.cell_size_m
            rec["cells"] = [[c.row, c.col] for c in self.cells]
        else:
            rec["grid"] = {
                "d_max_m": self.grid.d_max_m,
                "dt_max_s": self.grid.dt_max_s,
                "cell_size_m": self.grid.cell_size_m,
                "bucket_len_s": self.grid.bucket_len_s,
            }
            rec["tokens"] = sorted(t.hex() for t in self.tokens)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "CarrierPayload":
        try:
            kind = rec["kind"]
            common = dict(
                payload_id=str(rec["payload_id"]),
                epoch=int(rec["epoch"]),
                salt_epoch=bytes.fromhex(rec["salt_epoch"]),
                kind=kind,
                published_at_ms=int(rec["published_at_ms"]),
                window_start_ms=int(rec["window"][0]),
                window_end_ms=int(rec["window"][1]),
            )
            if kind == "cells":
                size = float(rec["cell_size_m"])
                return cls(
                    cells=tuple(GeoCell(row=int(r), col=int(c), cell_size_m=size) for r, c in rec["cells"]),
                    cell_size_m=size,
                    **common,
                )
            grid = rec.get("grid") or {}
            tokens = frozenset(bytes.fromhex(t) for t in rec.get("tokens", ()))
            if any(len(t) != TOKEN_LEN for t in tokens):
                raise ValueError("token digests must be 32 bytes")
            return cls(
                tokens=tokens,
                grid=MatchParams(
                    d_max_m=float(grid["d_max_m"]),
                    dt_max_s=float(grid["dt_max_s"]),
                    cell_size_m=float(grid["cell_size_m"]),
                    bucket_len_s=int(grid["bucket_len_s"]),
                ),
                **common,
            )
        except PublicationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise Malformed(f"bad payload record: {exc}") from exc


def build_carrier_payloads(
    redacted: RedactedTrail,
    epoch: int,
    salt_epoch: bytes,
    grid: MatchParams,
    published_at_ms: int,
) -> tuple[CarrierPayload, CarrierPayload]:
    """Both publication tiers (coarse cells + tokens) from one redacted trail."""
    points = redacted.kept.points
    if not points:
        raise ValueError("nothing left to publish after redaction")
    window = (points[0].timestamp_ms, points[-1].timestamp_ms)
    base_id = redacted.source_hash[:12]
    cells_payload = CarrierPayload(
        payload_id=f"pl-{base_id}-cells",
        epoch=epoch,
        salt_epoch=salt_epoch,
        kind="cells",
        published_at_ms=published_at_ms,
        window_start_ms=window[0],
        window_end_ms=window[1],
        cells=coarsen(redacted.kept, COARSE_CELL_SIZE_M),
        cell_size_m=COARSE_CELL_SIZE_M,
    )
    tokens_payload = CarrierPayload(
        payload_id=f"pl-{base_id}-tokens",
        epoch=epoch,
        salt_epoch=salt_epoch,
        kind="tokens",
        published_at_ms=published_at_ms,
        window_start_ms=window[0],
        window_end_ms=window[1],
        tokens=hash_tokens(redacted.kept, grid, salt_epoch, expand_neighbors=True),
        grid=grid,
    )
    return cells_payload, tokens_payload


# --- storage ---------------------------------------------------------------


class PayloadStore(Protocol):
    """Append-only log keyed by a gap-free cursor, plus a purge horizon."""

    def append(self, record: dict) -> int: ...

    def read_since(self, cursor: int, limit: int) -> list[tuple[int, dict]]: ...

    def head(self) -> int: ...

    def horizon(self) -> int: ...

    def purge(self, should_purge: Callable[[dict], bool]) -> int: ...


class MemoryStore:
    def __init__(self):
        self._entries: list[tuple[int, dict]] = []
        self._head = 0
        self._horizon = 0

    def append(self, record: dict) -> int:
        self._head += 1
        self._entries.append((self._head, record))
        return self._head

    def read_since(self, cursor: int, limit: int) -> list[tuple[int, dict]]:
        return [e for e in self._entries if e[0] > cursor][:limit]

    def head(self) -> int:
        return self._head

    def horizon(self) -> int:
        return self._horizon

    def purge(self, should_purge: Callable[[dict], bool]) -> int:
        kept = [(c, r) for c, r in self._entries if not should_purge(r)]
        purged = len(self._entries) - len(kept)
        if purged:
            self._entries = kept
            # first safe cursor: anything below it was issued before this purge
            # and may reference deleted payloads
            self._horizon = self._head + 1
        return purged


class FileStore:
    """Embedded append-only file store: log.jsonl plus a meta sidecar.

    Appends are fsynced before the cursor is handed out; purges rewrite the
    log through an atomic rename. The storage boundary is the PayloadStore
    protocol so a distributed backend can replace this one.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.log_path = self.root / "log.jsonl"
        self.meta_path = self.root / "meta.json"
        self._entries: list[tuple[int, dict]] = []
        self._head = 0
        self._horizon = 0
        self._load()

    def _load(self):
        if self.meta_path.exists():
            meta = json.loads(self.meta_path.read_text())
            self._head = int(meta.get("head", 0))
            self._horizon = int(meta.get("horizon", 0))
        if self.log_path.exists():
            for line in self.log_path.read_text().splitlines():
                if line.strip():
                    entry = json.loads(line)
                    self._entries.append((int(entry["cursor"]), entry["record"]))
            if self._entries:
                self._head = max(self._head, self._entries[-1][0])

    def _write_meta(self):
        tmp = self.meta_path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"head": self._head, "horizon": self._horizon}))
        os.replace(tmp, self.meta_path)

    def append(self, record: dict) -> int:
        self._head += 1
        line = json.dumps({"cursor": self._head, "record": record}) + "\n"
        with open(self.log_path, "a") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
        self._entries.append((self._head, record))
        self._write_meta()
        return self._head

    def read_since(self, cursor: int, limit: int) -> list[tuple[int, dict]]:
        return [e for e in self._entries if e[0] > cursor][:limit]

    def head(self) -> int:
        return self._head

    def horizon(self) -> int:
        return self._horizon

    def purge(self, should_purge: Callable[[dict], bool]) -> int:
        kept = [(c, r) for c, r in self._entries if not should_purge(r)]
        purged = len(self._entries) - len(kept)
        if not purged:
            return 0
        tmp = self.log_path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            for cursor, record in kept:
                fh.write(json.dumps({"cursor": cursor, "record": record}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.log_path)
        self._entries = kept
        self._horizon = self._head + 1  # first safe cursor (see MemoryStore)
        self._write_meta()
        return purged


# --- service -----------------------------------------------------------------


@dataclass(frozen=True)
class UpdatePage:
    """One page of replication: (cursor, payload) entries in ascending order."""

    entries: tuple[tuple[int, CarrierPayload], ...]
    next: SyncCursor
    snapshot_reset: bool

    @property
    def payloads(self) -> tuple[CarrierPayload, ...]:
        return tuple(p for _, p in self.entries)


def wallclock_ms() -> int:
    return int(time.time() * 1000)


class PublicationService:
    """Single-writer publication log with credential-gated mutations.

    Reads never require a credential and never block behind the writer for
    long: pages are consistent prefixes of the append log.
    """

    def __init__(
        self,
        store: PayloadStore | None = None,
        credentials: Iterable[str] = (),
        retention: RetentionPolicy = RetentionPolicy(),
        clock: Callable[[], int] = wallclock_ms,
    ):
        self.store = store if store is not None else MemoryStore()
        self._credentials = tuple(credentials)
        self.retention = retention
        self.clock = clock
        self._write_lock = threading.RLock()

    def _check_credential(self, cred: AuthorityCredential | str | None):
        token = cred.token if isinstance(cred, AuthorityCredential) else cred
        if not token or not any(hmac.compare_digest(token, c) for c in self._credentials):
            raise AuthFailed("bad or missing authority credential")

    def publish(self, cred: AuthorityCredential | str, payload: CarrierPayload) -> SyncCursor:
        self._check_credential(cred)
        with self._write_lock:
            now = self.clock()
            if abs(payload.published_at_ms - now) > PUBLISH_CLOCK_SKEW_MS:
                raise Malformed("published_at_ms disagrees with the server clock")
            if payload.window_end_ms - payload.window_start_ms > self.retention.retention_ms:
                raise RetentionViolation("contagion window longer than the retention limit")
            # same age-boundary convention as trail purging: age == retention is out
            if now - payload.window_start_ms >= self.retention.retention_ms:
                raise RetentionViolation("contagion window starts beyond the retention limit")
            if payload.window_end_ms - now > PUBLISH_CLOCK_SKEW_MS:
                raise Malformed("contagion window ends in the future")
            cursor = self.store.append(payload.to_record())
            return SyncCursor(cursor)

    def get_updates(self, since: SyncCursor | int, page_size: int) -> UpdatePage:
        since_value = since.value if isinstance(since, SyncCursor) else int(since)
        if since_value < 0:
            raise ValueError("cursor must be >= 0")
        if not 1 <= page_size <= MAX_PAGE_SIZE:
            raise ValueError(f"page_size must be in [1, {MAX_PAGE_SIZE}]")
        with self._write_lock:
            snapshot_reset = since_value < self.store.horizon()
            raw = self.store.read_since(since_value, page_size)
        entries = tuple((cursor, CarrierPayload.from_record(rec)) for cursor, rec in raw)
        next_cursor = entries[-1][0] if entries else since_value
        return UpdatePage(entries=entries, next=SyncCursor(next_cursor), snapshot_reset=snapshot_reset)

    def run_retention(self, cred: AuthorityCredential | str, now_ms: int | None = None) -> int:
        self._check_credential(cred)
        with self._write_lock:
            now = self.clock() if now_ms is None else now_ms
            limit = self.retention.retention_ms

            def expired(record: dict) -> bool:
                # age == retention is already out, matching the trail purge rule
                return now - int(record["window"][1]) >= limit

            return self.store.purge(expired)

    def head(self) -> SyncCursor:
        return SyncCursor(self.store.head())

    def horizon(self) -> SyncCursor:
        return SyncCursor(self.store.horizon())
