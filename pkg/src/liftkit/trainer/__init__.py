"""Trainer worker protocol: typed errors, client, in-process mock, HTTP glue."""

from .protocol import (
    ConcurrentTrainRejected,
    Decoding,
    DuplicateJobId,
    EncodingError,
    JobFinalized,
    NoBatchesTrained,
    TrainerClient,
    TrainerEndpoint,
    TrainerError,
    TrainerUnavailable,
    UnknownModel,
    UnknownRef,
)
from .mock import MockModel, MockTrainer
from .http import TrainerServer

__all__ = [
    "ConcurrentTrainRejected",
    "Decoding",
    "DuplicateJobId",
    "EncodingError",
    "JobFinalized",
    "MockModel",
    "MockTrainer",
    "NoBatchesTrained",
    "TrainerClient",
    "TrainerEndpoint",
    "TrainerError",
    "TrainerServer",
    "TrainerUnavailable",
    "UnknownModel",
    "UnknownRef",
]
