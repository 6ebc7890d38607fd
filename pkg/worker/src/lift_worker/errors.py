"""Error taxonomy of the trainer wire protocol.

Kinds and status codes must match the protocol exactly; clients dispatch
on the ``kind`` string in the error body.
"""

from __future__ import annotations


class TrainerError(Exception):
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


class RequestInvalid(TrainerError):
    kind = "ValidationError"
    http_status = 422
