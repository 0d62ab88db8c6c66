"""HTTP wire adapter for the publication service.

Plain request/response JSON over stdlib http.server. The route table is data,
not dispatch logic, so tests can enumerate the full API surface and verify
there is no route that ingests user location data.
"""

from __future__ import annotations

import json
import threading
import time
from collections import defaultdict, deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .publication import (
    CarrierPayload,
    FileStore,
    Malformed,
    PublicationError,
    PublicationService,
)
from .trail import RetentionPolicy

AUTH_HEADER = "X-Authority-Token"

# (method, path, credentialed, accepts_body) — the complete API surface.
ROUTES: tuple[tuple[str, str, bool, bool], ...] = (
    ("POST", "/v1/payloads", True, True),
    ("GET", "/v1/updates", False, False),
    ("POST", "/v1/retention/run", True, False),
    ("GET", "/v1/health", False, False),
)

RATE_LIMIT_PER_MINUTE = 600  # fixed per-IP cap

_STATUS_BY_CODE = {
    "AUTH_FAILED": 401,
    "RETENTION_VIOLATION": 422,
    "MALFORMED": 400,
}


class _RateLimiter:
    def __init__(self, per_minute: int = RATE_LIMIT_PER_MINUTE):
        self.per_minute = per_minute
        self._hits: dict[str, deque] = defaultdict(deque)
        self._lock = threading.Lock()

    def allow(self, ip: str) -> bool:
        now = time.monotonic()
        with self._lock:
            hits = self._hits[ip]
            while hits and now - hits[0] > 60.0:
                hits.popleft()
            if len(hits) >= self.per_minute:
                return False
            hits.append(now)
            return True


def make_handler(service: PublicationService, limiter: _RateLimiter | None = None):
    limiter = limiter or _RateLimiter()

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "safepaths"

        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _send_json(self, status: int, body: dict):
            data = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _error(self, status: int, code: str, detail: str = ""):
            self._send_json(status, {"error": code, "detail": detail})

        def _dispatch(self, method: str):
            if not limiter.allow(self.client_address[0]):
                self._error(429, "RATE_LIMITED", "fixed per-IP cap exceeded")
                return
            parsed = urlparse(self.path)
            route = next((r for r in ROUTES if r[0] == method and r[1] == parsed.path), None)
            if route is None:
                self._error(404, "NOT_FOUND", parsed.path)
                return
            try:
                if parsed.path == "/v1/payloads":
                    self._handle_publish()
                elif parsed.path == "/v1/updates":
                    self._handle_updates(parse_qs(parsed.query))
                elif parsed.path == "/v1/retention/run":
                    self._handle_retention()
                elif parsed.path == "/v1/health":
                    self._send_json(
                        200,
                        {
                            "status": "ok",
                            "head": service.head().value,
                            "horizon": service.horizon().value,
                        },
                    )
            except PublicationError as exc:
                self._error(_STATUS_BY_CODE.get(exc.code, 400), exc.code, str(exc))
            except ValueError as exc:
                self._error(400, "BAD_REQUEST", str(exc))

        def _read_body(self) -> bytes:
            length = int(self.headers.get("Content-Length", "0") or "0")
            return self.rfile.read(length) if length else b""

        def _handle_publish(self):
            cred = self.headers.get(AUTH_HEADER, "")
            body = self._read_body()
            try:
                record = json.loads(body.decode() or "null")
            except json.JSONDecodeError as exc:
                raise Malformed(f"body is not JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise Malformed("body must be a single payload record")
            payload = CarrierPayload.from_record(record)
            cursor = service.publish(cred, payload)
            self._send_json(200, {"cursor": cursor.value})

        def _handle_updates(self, query: dict):
            since = int(query.get("since", ["0"])[0])
            page_size = int(query.get("page_size", ["100"])[0])
            page = service.get_updates(since, page_size)
            self._send_json(
                200,
                {
                    "payloads": [
                        {"cursor": cursor, "record": payload.to_record()}
                        for cursor, payload in page.entries
                    ],
                    "next": page.next.value,
                    "snapshot_reset": page.snapshot_reset,
                },
            )

        def _handle_retention(self):
            cred = self.headers.get(AUTH_HEADER, "")
            purged = service.run_retention(cred)
            self._send_json(200, {"purged": purged})

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

    return Handler


class PublicationServer:
    """ThreadingHTTPServer wrapper: many readers, writes serialized by the service."""

    def __init__(self, service: PublicationService, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        self.httpd = ThreadingHTTPServer((host, port), make_handler(service))
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[0], self.httpd.server_address[1]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)


def load_config(path: str | Path) -> dict:
    cfg = json.loads(Path(path).read_text())
    cfg.setdefault("listen", "127.0.0.1:8700")
    cfg.setdefault("retention_days", 37)
    cfg.setdefault("credentials", [])
    return cfg


def serve_from_config(path: str | Path, extra_credential: str | None = None) -> PublicationServer:
    """Build a server from a config file; storage lives beside the config by default."""
    cfg = load_config(path)
    host, _, port = cfg["listen"].partition(":")
    credentials = list(cfg["credentials"])
    if extra_credential:
        credentials.append(extra_credential)
    store_dir = cfg.get("store_dir")
    store = FileStore(store_dir) if store_dir else None
    service = PublicationService(
        store=store,
        credentials=credentials,
        retention=RetentionPolicy(retention_days=int(cfg["retention_days"])),
    )
    return PublicationServer(service, host=host or "127.0.0.1", port=int(port or 0))
