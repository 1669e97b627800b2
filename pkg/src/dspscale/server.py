"""Minimal HTTP exposure of a gateway's entry points.

``POST /walker/{name}`` with header ``X-User`` and a JSON object body runs
the entry point and answers with exactly what ``Gateway.invoke`` returns.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import IsolationViolation, UnknownEntryPoint, ValidationError, WalkerFault
from .gateway import Gateway

log = logging.getLogger(__name__)


def error_status(exc: BaseException) -> int:
    if isinstance(exc, ValidationError):
        return 400
    if isinstance(exc, UnknownEntryPoint):
        return 404
    if isinstance(exc, IsolationViolation):
        return 409
    if isinstance(exc, WalkerFault) and isinstance(exc.cause, IsolationViolation):
        return 409
    return 500


def _make_handler(gateway: Gateway, persist: Path | None):
    class Handler(BaseHTTPRequestHandler):
        server_version = "dspscale/0.1"

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

        def _reply(self, status: int, payload) -> None:
            body = json.dumps(payload, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/health":
                self._reply(200, {"status": "ok"})
            elif self.path == "/walkers":
                self._reply(200, {"walkers": gateway.entrypoints()})
            else:
                self._reply(404, {"error": "not found", "detail": self.path})

        def do_POST(self):
            prefix = "/walker/"
            if not self.path.startswith(prefix):
                self._reply(404, {"error": "not found", "detail": self.path})
                return
            name = self.path[len(prefix):]
            try:
                gateway.spec(name)
            except UnknownEntryPoint as exc:
                self._reply(404, {"error": "unknown walker", "detail": str(exc)})
                return
            user = self.headers.get("X-User")
            if not user:
                self._reply(400, {"error": "validation", "detail": {"X-User": "header required"}})
                return
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            try:
                params = json.loads(raw.decode("utf-8")) if raw.strip() else {}
            except (UnicodeDecodeError, ValueError) as exc:
                self._reply(400, {"error": "validation", "detail": {"<body>": f"malformed JSON: {exc}"}})
                return
            try:
                result = gateway.invoke(user, name, params)
                if persist is not None:
                    gateway.snapshot(persist)
            except ValidationError as exc:
                self._reply(400, {"error": "validation", "detail": exc.errors})
            except Exception as exc:
                status = error_status(exc)
                trace_id = uuid.uuid4().hex
                if status == 500:
                    log.error("walker fault %s: %s", trace_id, exc)
                self._reply(status, {"error": type(exc).__name__, "detail": str(exc), "trace_id": trace_id})
            else:
                self._reply(200, result)

    return Handler


@dataclass
class ServiceHandle:
    server: ThreadingHTTPServer
    thread: threading.Thread | None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server.server_address[:2]
        return host, port

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def wait(self) -> None:
        """Block until the server thread stops (Ctrl-C interrupts)."""
        while self.thread is not None and self.thread.is_alive():
            self.thread.join(0.5)

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self.thread is not None:
            self.thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(gateway: Gateway, host: str = "127.0.0.1", port: int = 0, persist=None, background: bool = True) -> ServiceHandle:
    """Bind and start serving; ``port=0`` picks a free port.

    With ``persist`` a snapshot is written after every successful invocation.
    With ``background=False`` this blocks in ``serve_forever``.
    """
    handler = _make_handler(gateway, Path(persist) if persist else None)
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    if not background:
        handle = ServiceHandle(server, None)
        try:
            server.serve_forever()
        finally:
            server.server_close()
        return handle
    # a short poll keeps close() quick
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, name="dspscale-http", daemon=True)
    thread.start()
    return ServiceHandle(server, thread)
