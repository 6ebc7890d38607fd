"""HTTP face of the worker: the five protocol endpoints plus healthz.

Wire behavior (routes, status codes, error record shape) matches the
protocol exactly so the engine's client cannot tell this worker from the
mock.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import RequestInvalid, TrainerError
from .worker import LoraWorker, WorkerConfig, load_base_model

_JOB_ROUTE = re.compile(r"^/v1/jobs/(?P<handle>[^/]+)/(?P<action>batches|finalize|generate)$")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *_args) -> None:
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
            raise RequestInvalid("request body must be a JSON object")
        return body

    def do_GET(self) -> None:
        if self.path == "/v1/healthz":
            self._send(200, {"status": "ok"})
        else:
            self._send_error(404, "NotFound", f"no route {self.path}")

    def do_POST(self) -> None:
        worker: LoraWorker = self.server.worker  # type: ignore[attr-defined]
        try:
            body = self._read_body()
        except (ValueError, RequestInvalid) as exc:
            self._send_error(422, "ValidationError", str(exc))
            return
        try:
            if self.path == "/v1/jobs":
                self._send(201, {"job_id": worker.create_job(body)})
                return
            if self.path == "/v1/tokenize":
                text = body.get("text")
                if not isinstance(text, str):
                    raise RequestInvalid("field 'text' must be a string")
                self._send(200, {"count": worker.tokenize(text)})
                return
            match = _JOB_ROUTE.match(self.path)
            if match is None:
                self._send_error(404, "NotFound", f"no route {self.path}")
                return
            handle, action = match.group("handle"), match.group("action")
            if action == "batches":
                self._send(200, worker.train_batch(handle, body))
            elif action == "finalize":
                self._send(200, {"adapter_ref": worker.finalize(handle)})
            else:
                text = worker.generate(
                    handle,
                    body.get("prompt"),
                    int(body.get("max_tokens", 64)),
                    body.get("decoding") or {"kind": "greedy"},
                )
                self._send(200, {"text": text})
        except TrainerError as exc:
            self._send_error(exc.http_status, exc.kind, str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            self._send_error(422, "ValidationError", str(exc))


class WorkerServer:
    """Serve a LoraWorker over HTTP on a background thread."""

    def __init__(self, worker: LoraWorker, host: str = "127.0.0.1", port: int = 0):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.worker = worker  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "WorkerServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def __enter__(self) -> "WorkerServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()


def serve(config: WorkerConfig, host: str = "127.0.0.1", port: int = 8080) -> WorkerServer:
    """Start serving; returns the running server."""
    return WorkerServer(LoraWorker(config), host=host, port=port).start()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="lift-worker", description="trainer worker service")
    parser.add_argument("--config", required=True, help="worker config JSON")
    args = parser.parse_args(argv)
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        models = {
            name: load_base_model(path) for name, path in raw.get("models", {}).items()
        }
        config = WorkerConfig(
            models=models,
            device=raw.get("device", "cpu"),
            max_concurrent_jobs=raw.get("max_concurrent_jobs", 4),
            default_rank=raw.get("default_rank", 128),
            default_alpha=raw.get("default_alpha"),
            default_dropout=raw.get("default_dropout", 0.0),
        )
        server = WorkerServer(
            LoraWorker(config), host=raw.get("host", "127.0.0.1"), port=raw.get("port", 8080)
        )
    except Exception as exc:  # startup failures must exit nonzero
        print(f"lift-worker: startup failed: {exc}", file=sys.stderr)
        return 1
    print(f"lift-worker: serving on {server.base_url}", file=sys.stderr)
    server.serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())
