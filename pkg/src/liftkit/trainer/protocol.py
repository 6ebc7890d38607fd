"""Wire protocol shared by every trainer worker.

A worker exposes five operations (create_job, train_batch, finalize,
generate, tokenize) either in-process or over HTTP. The error taxonomy and
its HTTP status mapping live here so the mock and any real worker stay
black-box identical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Protocol

import requests

from ..types import BatchLossReport, TaskBatch, TrainerJob, _require


class TrainerError(Exception):
    """Base class; ``kind`` is the stable name carried on the wire."""

    kind = "TrainerError"
    http_status = 500


class UnknownModel(TrainerError):
    kind = "UnknownModel"
    http_status = 422


class DuplicateJobId(TrainerError):
    kind = "DuplicateJobId"
    http_status = 409


class JobFinalized(TrainerError):
    kind = "JobFinalized"
    http_status = 409


class NoBatchesTrained(TrainerError):
    kind = "NoBatchesTrained"
    http_status = 409


class UnknownRef(TrainerError):
    kind = "UnknownRef"
    http_status = 404


class EncodingError(TrainerError):
    kind = "EncodingError"
    http_status = 422


class ConcurrentTrainRejected(TrainerError):
    kind = "ConcurrentTrainRejected"
    http_status = 409


class TrainerUnavailable(TrainerError):
    """Transport-level failure reaching the worker; aborts the run."""

    kind = "TrainerUnavailable"
    http_status = 503


ERROR_KINDS = {
    cls.kind: cls
    for cls in (
        UnknownModel,
        DuplicateJobId,
        JobFinalized,
        NoBatchesTrained,
        UnknownRef,
        EncodingError,
        ConcurrentTrainRejected,
        TrainerUnavailable,
    )
}


@dataclass(frozen=True)
class Decoding:
    """Decoding mode for generate: greedy, or seeded sampling."""

    kind: str = "greedy"
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        _require(self.kind in ("greedy", "sampled"), "kind", "must be greedy or sampled")
        _require(self.temperature > 0, "temperature", "must be > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "temperature": self.temperature, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "Decoding":
        return cls(
            kind=d.get("kind", "greedy"),
            temperature=d.get("temperature", 1.0),
            seed=d.get("seed", 0),
        )


class TrainerWorker(Protocol):
    """The five protocol operations every worker implements."""

    def create_job(self, job: TrainerJob) -> str: ...

    def train_batch(self, handle: str, batch: TaskBatch) -> BatchLossReport: ...

    def finalize(self, handle: str) -> str: ...

    def generate(self, handle_or_ref: str, prompt: str, max_tokens: int, decoding: Decoding) -> str: ...

    def tokenize(self, text: str) -> int: ...


@dataclass(frozen=True)
class TrainerEndpoint:
    """Where the trainer lives: exactly one of a URL or an in-process worker."""

    base_url: str | None = None
    in_process: Any | None = None
    timeout: float = 600.0
    api_key_env: str = "LIFT_TRAINER_API_KEY"

    def __post_init__(self) -> None:
        _require(
            (self.base_url is None) != (self.in_process is None),
            "base_url",
            "exactly one of base_url / in_process must be set",
        )


class TrainerClient:
    """Uniform client over an in-process worker or a remote HTTP worker."""

    def __init__(self, endpoint: TrainerEndpoint):
        self.endpoint = endpoint
        self._session = requests.Session() if endpoint.base_url else None

    # -- transport ---------------------------------------------------------

    def _post(self, path: str, payload: dict) -> dict:
        assert self.endpoint.base_url is not None
        headers = {}
        api_key = os.environ.get(self.endpoint.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            resp = self._session.post(
                self.endpoint.base_url.rstrip("/") + path,
                json=payload,
                headers=headers,
                timeout=self.endpoint.timeout,
            )
        except requests.RequestException as exc:
            raise TrainerUnavailable(f"trainer unreachable: {exc}") from exc
        if resp.status_code in (200, 201):
            return resp.json()
        try:
            error = resp.json()["error"]
            kind, message = error["kind"], error.get("message", "")
        except (ValueError, KeyError, TypeError):
            raise TrainerUnavailable(f"trainer returned HTTP {resp.status_code} with no error record")
        raise ERROR_KINDS.get(kind, TrainerError)(message)

    # -- protocol operations ----------------------------------------------

    def create_job(self, job: TrainerJob) -> str:
        if self.endpoint.in_process is not None:
            return self.endpoint.in_process.create_job(job)
        return self._post("/v1/jobs", job.to_dict())["job_id"]

    def train_batch(self, handle: str, batch: TaskBatch) -> BatchLossReport:
        if self.endpoint.in_process is not None:
            return self.endpoint.in_process.train_batch(handle, batch)
        body = self._post(f"/v1/jobs/{handle}/batches", batch.to_dict())
        return BatchLossReport.from_dict(body)

    def finalize(self, handle: str) -> str:
        if self.endpoint.in_process is not None:
            return self.endpoint.in_process.finalize(handle)
        return self._post(f"/v1/jobs/{handle}/finalize", {})["adapter_ref"]

    def generate(
        self,
        handle_or_ref: str,
        prompt: str,
        max_tokens: int = 64,
        decoding: Decoding = Decoding(),
    ) -> str:
        if self.endpoint.in_process is not None:
            return self.endpoint.in_process.generate(handle_or_ref, prompt, max_tokens, decoding)
        body = self._post(
            f"/v1/jobs/{handle_or_ref}/generate",
            {"prompt": prompt, "max_tokens": max_tokens, "decoding": decoding.to_dict()},
        )
        return body["text"]

    def tokenize(self, text: str) -> int:
        if self.endpoint.in_process is not None:
            return self.endpoint.in_process.tokenize(text)
        return self._post("/v1/tokenize", {"text": text})["count"]
