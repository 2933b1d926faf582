"""A replay server for integration tests: answers each endpoint with a canned response.

Request bodies are decoded with the protocol codecs (malformed ones get
HTTP 400) and kept in ``requests`` for inspection.
"""

from __future__ import annotations

import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from ..errors import PipelineError
from . import protocol

log = logging.getLogger(__name__)

ROLE_KINDS = {
    "/detect": ("detect_request", "detect_response"),
    "/segment": ("segment_request", "segment_response"),
    "/caption": ("caption_request", "caption_response"),
    "/background": ("background_request", "background_response"),
}


def load_fixtures(directory: Optional[Union[str, Path]] = None) -> Dict[str, bytes]:
    """Read ``<kind>.json`` golden files; ``None`` reads the fixtures shipped with the package."""
    out = {}
    for kind in protocol.MESSAGES:
        if directory is None:
            ref = resources.files("subjectswap.data").joinpath("protocol", f"{kind}.json")
            out[kind] = ref.read_bytes()
        else:
            path = Path(directory) / f"{kind}.json"
            if path.exists():
                out[kind] = path.read_bytes()
    return out


class StubServer:
    def __init__(self, fixtures: Dict[str, bytes], host: str = "127.0.0.1", port: int = 0):
        self.fixtures = fixtures
        self.requests: List[Tuple[str, object]] = []
        self._lock = threading.Lock()
        self._httpd = ThreadingHTTPServer((host, port), self._handler())
        self._httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                log.debug("stub: " + fmt, *args)

            def _reply(self, status: int, body: bytes):
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self):
                kinds = ROLE_KINDS.get(self.path)
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                if kinds is None:
                    return self._reply(404, protocol.dumps({"error": f"unknown endpoint {self.path}"}))
                request_kind, response_kind = kinds
                try:
                    message = protocol.decode(request_kind, body)
                except PipelineError as exc:
                    return self._reply(400, protocol.dumps({"error": str(exc)}))
                with server._lock:
                    server.requests.append((request_kind, message))
                canned = server.fixtures.get(response_kind)
                if canned is None:
                    return self._reply(501, protocol.dumps({"error": f"no fixture for {response_kind}"}))
                self._reply(200, canned)

        return Handler

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._httpd.serve_forever()

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
