"""In-process mock trainer with analytically exact losses.

The mock model is an order-free categorical distribution over whitespace
tokens, so the supervised objective (negative log-likelihood of answer
tokens) and its training trajectory have closed forms a test can recompute
by hand. It exists to exercise the engine, not to model language.
"""

from __future__ import annotations

import math
import random
import threading
import time

from ..types import BatchLossReport, QAPair, RawSegment, TaskBatch, TrainerJob
from .protocol import (
    ConcurrentTrainRejected,
    Decoding,
    DuplicateJobId,
    EncodingError,
    JobFinalized,
    NoBatchesTrained,
    UnknownModel,
    UnknownRef,
)

_RESCALE_THRESHOLD = 1e250


class MockModel:
    """Order-free categorical token model with a multiplicative update rule.

    With a vocabulary the distribution starts uniform and is closed (out of
    vocabulary input raises EncodingError); without one the vocabulary is
    open and grows as tokens are observed, each entering at weight 1.
    """

    def __init__(self, vocabulary: list[str] | None = None):
        self.closed = vocabulary is not None
        self._weights: dict[str, float] = {tok: 1.0 for tok in (vocabulary or [])}

    def clone(self) -> "MockModel":
        copy = MockModel([] if self.closed else None)
        copy.closed = self.closed
        copy._weights = dict(self._weights)
        return copy

    @staticmethod
    def tokenize(text: str) -> list[str]:
        return text.split()

    @property
    def vocab_size(self) -> int:
        return len(self._weights)

    def probability(self, token: str) -> float:
        total = sum(self._weights.values())
        return self._weights[token] / total

    def admit(self, tokens: list[str]) -> None:
        """Make every token known, or reject it for a closed vocabulary."""
        for tok in tokens:
            if tok not in self._weights:
                if self.closed:
                    raise EncodingError(f"token {tok!r} not in vocabulary")
                self._weights[tok] = 1.0

    def sequence_nll(self, tokens: list[str]) -> float:
        total = sum(self._weights.values())
        return sum(-math.log(self._weights[t] / total) for t in tokens)

    def apply_update(self, tokens: list[str], eta: float) -> None:
        """Multiply each observed token occurrence's weight by (1 + eta)."""
        for tok in tokens:
            self._weights[tok] *= 1.0 + eta
        peak = max(self._weights.values(), default=0.0)
        if peak > _RESCALE_THRESHOLD:
            for tok in self._weights:
                self._weights[tok] /= peak

    def decode(self, max_tokens: int, decoding: Decoding) -> list[str]:
        """Emit distinct tokens, best-first.

        Greedy walks the vocabulary in decreasing probability (ties broken
        by insertion order); sampling draws without replacement from the
        temperature-adjusted distribution with a seeded RNG.
        """
        order = {tok: i for i, tok in enumerate(self._weights)}
        if decoding.kind == "greedy":
            ranked = sorted(self._weights, key=lambda t: (-self._weights[t], order[t]))
            return ranked[:max_tokens]
        rng = random.Random(decoding.seed)
        pool = {t: w ** (1.0 / decoding.temperature) for t, w in self._weights.items()}
        out: list[str] = []
        while pool and len(out) < max_tokens:
            total = sum(pool.values())
            pick = rng.random() * total
            acc = 0.0
            chosen = next(iter(pool))
            for tok, w in pool.items():
                acc += w
                if pick <= acc:
                    chosen = tok
                    break
            out.append(chosen)
            del pool[chosen]
        return out


class _MockJob:
    def __init__(self, job: TrainerJob, model: MockModel):
        self.job = job
        self.model = model
        self.batches_trained = 0
        self.adapter_ref: str | None = None
        self.train_lock = threading.Lock()


class MockTrainer:
    """A full trainer worker backed by MockModel, one model clone per job.

    ``train_delay`` artificially stretches train_batch so tests can provoke
    overlapping-train rejection deterministically.
    """

    def __init__(
        self,
        base_models: dict[str, list[str] | None] | None = None,
        train_delay: float = 0.0,
    ):
        self.base_models = base_models if base_models is not None else {"mock-base": None}
        self.train_delay = train_delay
        self._jobs: dict[str, _MockJob] = {}
        self._refs: dict[str, str] = {}
        self._lock = threading.Lock()

    def base_model(self, name: str) -> MockModel:
        if name not in self.base_models:
            raise UnknownModel(f"base model {name!r} not registered")
        return MockModel(self.base_models[name])

    def _job(self, handle: str) -> _MockJob:
        with self._lock:
            job = self._jobs.get(handle)
        if job is None:
            raise UnknownRef(f"unknown job {handle!r}")
        return job

    # -- protocol operations ----------------------------------------------

    def create_job(self, job: TrainerJob) -> str:
        model = self.base_model(job.base_model)
        with self._lock:
            if job.job_id in self._jobs:
                raise DuplicateJobId(f"job {job.job_id!r} already exists")
            self._jobs[job.job_id] = _MockJob(job, model)
        return job.job_id

    def train_batch(self, handle: str, batch: TaskBatch) -> BatchLossReport:
        state = self._job(handle)
        if state.adapter_ref is not None:
            raise JobFinalized(f"job {handle!r} is finalized")
        if not state.train_lock.acquire(blocking=False):
            raise ConcurrentTrainRejected(f"job {handle!r} already has a train call in flight")
        try:
            if self.train_delay:
                time.sleep(self.train_delay)
            per_item_tokens: list[list[str]] = []
            for item in batch.items:
                if isinstance(item, QAPair):
                    tokens = state.model.tokenize(item.answer)
                elif isinstance(item, RawSegment):
                    tokens = state.model.tokenize(item.text)
                else:
                    raise EncodingError(f"unsupported item type {type(item).__name__}")
                if not tokens:
                    raise EncodingError("item has no tokens")
                per_item_tokens.append(tokens)
            for tokens in per_item_tokens:
                state.model.admit(tokens)
            total_nll = sum(state.model.sequence_nll(tokens) for tokens in per_item_tokens)
            eta = 10.0 * state.job.learning_rate
            observed = [tok for tokens in per_item_tokens for tok in tokens]
            state.model.apply_update(observed, eta)
            state.batches_trained += 1
            return BatchLossReport(
                epoch=batch.epoch,
                batch_index=batch.batch_index,
                mean_loss=total_nll / len(batch.items),
                item_count=len(batch.items),
            )
        finally:
            state.train_lock.release()

    def finalize(self, handle: str) -> str:
        state = self._job(handle)
        if state.adapter_ref is not None:
            return state.adapter_ref
        if state.batches_trained == 0:
            raise NoBatchesTrained(f"job {handle!r} trained no batches")
        ref = f"adapter:{handle}"
        state.adapter_ref = ref
        with self._lock:
            self._refs[ref] = handle
        return ref

    def generate(
        self,
        handle_or_ref: str,
        prompt: str,
        max_tokens: int = 64,
        decoding: Decoding = Decoding(),
    ) -> str:
        with self._lock:
            handle = self._refs.get(handle_or_ref, handle_or_ref)
        state = self._job(handle)
        del prompt  # order-free model: the prompt cannot shift the distribution
        return " ".join(state.model.decode(max_tokens, decoding))

    def tokenize(self, text: str) -> int:
        return len(text.split())
