"""HTTP transport for the trainer protocol.

``TrainerServer`` exposes any in-process worker over the five protocol
endpoints; the error taxonomy maps onto status codes via each error's
``http_status`` so the wire behavior is identical no matter which worker
sits behind it.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..types import TaskBatch, TrainerJob, ValidationError
from .protocol import Decoding, TrainerError

_JOB_ROUTE = re.compile(r"^/v1/jobs/(?P<handle>[^/]+)/(?P<action>batches|finalize|generate)$")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *_args) -> None:  # keep test output quiet
        pass

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, status: int, kind: str, message: str) -> None:
        self._send(status, {"error": {"kind": kind, "message": message}})

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b"{}"
        body = json.loads(raw.decode("utf-8"))
        if not isinstance(body, dict):
            raise ValidationError("body", "request body must be a JSON object")
        return body

    def do_GET(self) -> None:
        if self.path == "/v1/healthz":
            self._send(200, {"status": "ok"})
        else:
            self._send_error(404, "NotFound", f"no route {self.path}")

    def do_POST(self) -> None:
        worker = self.server.worker  # type: ignore[attr-defined]
        try:
            body = self._read_body()
        except (ValueError, ValidationError) as exc:
            self._send_error(422, "ValidationError", str(exc))
            return
        try:
            if self.path == "/v1/jobs":
                handle = worker.create_job(TrainerJob.from_dict(body))
                self._send(201, {"job_id": handle})
                return
            if self.path == "/v1/tokenize":
                text = body["text"]
                if not isinstance(text, str):
                    raise ValidationError("text", "must be a string")
                self._send(200, {"count": worker.tokenize(text)})
                return
            match = _JOB_ROUTE.match(self.path)
            if match is None:
                self._send_error(404, "NotFound", f"no route {self.path}")
                return
            handle, action = match.group("handle"), match.group("action")
            if action == "batches":
                report = worker.train_batch(handle, TaskBatch.from_dict(body))
                self._send(200, report.to_dict())
            elif action == "finalize":
                self._send(200, {"adapter_ref": worker.finalize(handle)})
            else:
                text = worker.generate(
                    handle,
                    body["prompt"],
                    int(body.get("max_tokens", 64)),
                    Decoding.from_dict(body.get("decoding", {})),
                )
                self._send(200, {"text": text})
        except TrainerError as exc:
            self._send_error(exc.http_status, exc.kind, str(exc))
        except (ValidationError, KeyError, TypeError, ValueError) as exc:
            self._send_error(422, "ValidationError", str(exc))


class TrainerServer:
    """Serve a trainer worker over HTTP on a background thread."""

    def __init__(self, worker, host: str = "127.0.0.1", port: int = 0):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.worker = worker  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "TrainerServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "TrainerServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()
