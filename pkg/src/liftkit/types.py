"""Core domain types shared by every module.

All types are immutable after construction, validate their invariants in
``__post_init__`` (raising :class:`ValidationError` naming the offending
field), and round-trip through the JSON interchange encoding via
``to_dict`` / ``from_dict``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Union

BENCHMARK_KINDS = ("squad", "niah", "generic")
LOSS_MASKING_MODES = ("answer_only",)
ADAPTER_INIT_SCHEMES = ("b_zero",)
BATCH_SOURCES = ("qa", "raw_segment", "mixed")

EVENT_KINDS = (
    "input_submitted",
    "sentence_dispatched",
    "qa_arrived",
    "batch_formed",
    "batch_trained",
    "training_done",
    "first_answer_token",
    "answer_done",
)


class ValidationError(ValueError):
    """An invariant violation at construction time, tagged with the field."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


def _require(condition: bool, field_name: str, message: str) -> None:
    if not condition:
        raise ValidationError(field_name, message)


def canonical_json(obj: Any) -> str:
    """Deterministic single-line JSON used for cache records and digests."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class Document:
    """A long input text plus its token-count estimate."""

    doc_id: str
    text: str
    benchmark_kind: str
    approx_token_count: int

    def __post_init__(self) -> None:
        _require(bool(self.doc_id), "doc_id", "must be non-empty")
        _require(bool(self.text), "text", "must be non-empty")
        _require(
            self.benchmark_kind in BENCHMARK_KINDS,
            "benchmark_kind",
            f"must be one of {BENCHMARK_KINDS}",
        )
        _require(self.approx_token_count >= 0, "approx_token_count", "must be >= 0")

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "text": self.text,
            "benchmark_kind": self.benchmark_kind,
            "approx_token_count": self.approx_token_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        return cls(
            doc_id=d["doc_id"],
            text=d["text"],
            benchmark_kind=d["benchmark_kind"],
            approx_token_count=d["approx_token_count"],
        )


@dataclass(frozen=True)
class SentenceUnit:
    """One sentence of a document plus a short window of preceding context."""

    doc_id: str
    sentence_index: int
    sentence_text: str
    preceding_context: str

    def __post_init__(self) -> None:
        _require(bool(self.doc_id), "doc_id", "must be non-empty")
        _require(self.sentence_index >= 0, "sentence_index", "must be >= 0")
        _require(bool(self.sentence_text), "sentence_text", "must be non-empty")

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "sentence_index": self.sentence_index,
            "sentence_text": self.sentence_text,
            "preceding_context": self.preceding_context,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SentenceUnit":
        return cls(
            doc_id=d["doc_id"],
            sentence_index=d["sentence_index"],
            sentence_text=d["sentence_text"],
            preceding_context=d["preceding_context"],
        )


@dataclass(frozen=True)
class QAPair:
    """One synthetic question-answer task derived from one sentence."""

    doc_id: str
    sentence_index: int
    qa_index: int
    question: str
    answer: str
    generator_model: str
    prompt_hash: str

    def __post_init__(self) -> None:
        _require(bool(self.doc_id), "doc_id", "must be non-empty")
        _require(self.sentence_index >= 0, "sentence_index", "must be >= 0")
        _require(self.qa_index >= 0, "qa_index", "must be >= 0")
        _require(bool(self.question), "question", "must be non-empty")
        _require(bool(self.answer), "answer", "must be non-empty")

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.doc_id, self.sentence_index, self.qa_index)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "sentence_index": self.sentence_index,
            "qa_index": self.qa_index,
            "question": self.question,
            "answer": self.answer,
            "generator_model": self.generator_model,
            "prompt_hash": self.prompt_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QAPair":
        return cls(
            doc_id=d["doc_id"],
            sentence_index=d["sentence_index"],
            qa_index=d["qa_index"],
            question=d["question"],
            answer=d["answer"],
            generator_model=d["generator_model"],
            prompt_hash=d["prompt_hash"],
        )


@dataclass(frozen=True)
class RawSegment:
    """A contiguous chunk of a document used for raw-text training."""

    doc_id: str
    segment_index: int
    text: str
    target_token_len: int

    def __post_init__(self) -> None:
        _require(bool(self.doc_id), "doc_id", "must be non-empty")
        _require(self.segment_index >= 0, "segment_index", "must be >= 0")
        _require(bool(self.text), "text", "must be non-empty")
        _require(self.target_token_len >= 1, "target_token_len", "must be >= 1")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.doc_id, "segment", self.segment_index)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "segment_index": self.segment_index,
            "text": self.text,
            "target_token_len": self.target_token_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RawSegment":
        return cls(
            doc_id=d["doc_id"],
            segment_index=d["segment_index"],
            text=d["text"],
            target_token_len=d["target_token_len"],
        )


TrainingItem = Union[QAPair, RawSegment]


def _item_to_dict(item: TrainingItem) -> dict:
    if isinstance(item, QAPair):
        return {"kind": "qa", **item.to_dict()}
    return {"kind": "raw_segment", **item.to_dict()}


def _item_from_dict(d: dict) -> TrainingItem:
    kind = d.get("kind")
    if kind == "qa":
        return QAPair.from_dict(d)
    if kind == "raw_segment":
        return RawSegment.from_dict(d)
    raise ValidationError("kind", f"unknown training item kind {kind!r}")


@dataclass(frozen=True)
class TaskBatch:
    """An ordered mini-batch of training items within one epoch."""

    epoch: int
    batch_index: int
    items: tuple[TrainingItem, ...]
    source: str

    def __post_init__(self) -> None:
        _require(self.epoch >= 1, "epoch", "must be >= 1")
        _require(self.batch_index >= 0, "batch_index", "must be >= 0")
        _require(len(self.items) >= 1, "items", "must be non-empty")
        _require(self.source in BATCH_SOURCES, "source", f"must be one of {BATCH_SOURCES}")
        object.__setattr__(self, "items", tuple(self.items))

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "batch_index": self.batch_index,
            "items": [_item_to_dict(i) for i in self.items],
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskBatch":
        return cls(
            epoch=d["epoch"],
            batch_index=d["batch_index"],
            items=tuple(_item_from_dict(i) for i in d["items"]),
            source=d["source"],
        )


@dataclass(frozen=True)
class AdapterConfig:
    """Low-rank adapter settings for a fine-tuning job."""

    rank: int
    alpha: float
    init_scheme: str = "b_zero"

    def __post_init__(self) -> None:
        _require(self.rank > 0, "rank", "must be > 0")
        _require(self.alpha > 0, "alpha", "must be > 0")
        _require(
            self.init_scheme in ADAPTER_INIT_SCHEMES,
            "init_scheme",
            f"must be one of {ADAPTER_INIT_SCHEMES}",
        )

    def to_dict(self) -> dict:
        return {"rank": self.rank, "alpha": self.alpha, "init_scheme": self.init_scheme}

    @classmethod
    def from_dict(cls, d: dict) -> "AdapterConfig":
        return cls(rank=d["rank"], alpha=d["alpha"], init_scheme=d["init_scheme"])


@dataclass(frozen=True)
class TrainerJob:
    """The contract sent to a trainer worker when opening a fine-tuning job.

    ``b_zero`` initialization means the adapter's output-side factor starts
    at zero, so the adapted model initially behaves exactly like the base
    model.
    """

    job_id: str
    base_model: str
    adapter: AdapterConfig
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int
    loss_masking: str = "answer_only"

    def __post_init__(self) -> None:
        _require(bool(self.job_id), "job_id", "must be non-empty")
        _require(bool(self.base_model), "base_model", "must be non-empty")
        _require(self.learning_rate > 0, "learning_rate", "must be > 0")
        _require(self.epochs >= 1, "epochs", "must be >= 1")
        _require(self.batch_size >= 1, "batch_size", "must be >= 1")
        _require(
            self.loss_masking in LOSS_MASKING_MODES,
            "loss_masking",
            f"must be one of {LOSS_MASKING_MODES}",
        )

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "base_model": self.base_model,
            "adapter": self.adapter.to_dict(),
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "loss_masking": self.loss_masking,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerJob":
        return cls(
            job_id=d["job_id"],
            base_model=d["base_model"],
            adapter=AdapterConfig.from_dict(d["adapter"]),
            learning_rate=d["learning_rate"],
            epochs=d["epochs"],
            batch_size=d["batch_size"],
            seed=d["seed"],
            loss_masking=d["loss_masking"],
        )


@dataclass(frozen=True)
class BatchLossReport:
    """Per-batch loss summary returned by the trainer.

    ``mean_loss`` is the mean over items of the negative log-likelihood of
    the answer tokens given the question tokens (all tokens, for raw
    segments).
    """

    epoch: int
    batch_index: int
    mean_loss: float
    item_count: int

    def __post_init__(self) -> None:
        _require(self.epoch >= 1, "epoch", "must be >= 1")
        _require(self.batch_index >= 0, "batch_index", "must be >= 0")
        _require(self.item_count >= 1, "item_count", "must be >= 1")
        _require(
            self.mean_loss >= 0 and self.mean_loss == self.mean_loss and self.mean_loss != float("inf"),
            "mean_loss",
            "must be finite and >= 0",
        )

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "batch_index": self.batch_index,
            "mean_loss": self.mean_loss,
            "item_count": self.item_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BatchLossReport":
        return cls(
            epoch=d["epoch"],
            batch_index=d["batch_index"],
            mean_loss=d["mean_loss"],
            item_count=d["item_count"],
        )


@dataclass(frozen=True)
class NiahCase:
    """A needle-in-a-haystack test case: 5 instances at one (length, depth)."""

    length_l: int
    depth_d: float
    needle: str
    question: str
    instances: tuple[Document, ...]

    def __post_init__(self) -> None:
        _require(self.length_l >= 1, "length_l", "must be >= 1")
        _require(0 <= self.depth_d <= 100, "depth_d", "must be in [0, 100]")
        _require(bool(self.needle), "needle", "must be non-empty")
        _require(bool(self.question), "question", "must be non-empty")
        _require(len(self.instances) == 5, "instances", "must contain exactly 5 documents")
        object.__setattr__(self, "instances", tuple(self.instances))
        texts = [inst.text for inst in self.instances]
        _require(len(set(texts)) == 5, "instances", "instances must use distinct filler")
        tolerance = 0.02 * self.length_l
        for inst in self.instances:
            _require(
                inst.text.count(self.needle) == 1,
                "instances",
                f"needle must appear exactly once in {inst.doc_id}",
            )
            _require(
                abs(inst.approx_token_count - self.length_l) <= tolerance,
                "instances",
                f"{inst.doc_id} token count {inst.approx_token_count} outside "
                f"±2% of {self.length_l}",
            )

    def to_dict(self) -> dict:
        return {
            "length_l": self.length_l,
            "depth_d": self.depth_d,
            "needle": self.needle,
            "question": self.question,
            "instances": [inst.to_dict() for inst in self.instances],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NiahCase":
        return cls(
            length_l=d["length_l"],
            depth_d=d["depth_d"],
            needle=d["needle"],
            question=d["question"],
            instances=tuple(Document.from_dict(i) for i in d["instances"]),
        )


@dataclass(frozen=True)
class MetricEvent:
    """One timestamped pipeline event (seconds from run start)."""

    event_kind: str
    wall_clock_time: float

    def __post_init__(self) -> None:
        _require(self.event_kind in EVENT_KINDS, "event_kind", f"must be one of {EVENT_KINDS}")
        _require(self.wall_clock_time >= 0, "wall_clock_time", "must be >= 0")

    def to_dict(self) -> dict:
        return {"event_kind": self.event_kind, "wall_clock_time": self.wall_clock_time}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricEvent":
        return cls(event_kind=d["event_kind"], wall_clock_time=d["wall_clock_time"])


@dataclass(frozen=True)
class PipelineMetrics:
    """An ordered event log from one run; TTFT is derived, not stored."""

    events: tuple[MetricEvent, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))
        times = [e.wall_clock_time for e in self.events]
        _require(
            all(a <= b for a, b in zip(times, times[1:])),
            "events",
            "event times must be monotonically nondecreasing",
        )

    def first_time(self, kind: str) -> float | None:
        for e in self.events:
            if e.event_kind == kind:
                return e.wall_clock_time
        return None

    @property
    def ttft(self) -> float | None:
        """first_answer_token minus input_submitted, or None if either is absent."""
        start = self.first_time("input_submitted")
        first_tok = self.first_time("first_answer_token")
        if start is None or first_tok is None:
            return None
        return first_tok - start

    def to_dict(self) -> dict:
        return {"events": [e.to_dict() for e in self.events]}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineMetrics":
        return cls(events=tuple(MetricEvent.from_dict(e) for e in d["events"]))


@dataclass(frozen=True)
class CostModel:
    """Parameters of the batched-short-QA training cost comparison."""

    qa_count: int
    qa_token_len: int

    def __post_init__(self) -> None:
        _require(self.qa_count >= 1, "qa_count", "must be >= 1")
        _require(self.qa_token_len >= 1, "qa_token_len", "must be >= 1")

    def to_dict(self) -> dict:
        return {"qa_count": self.qa_count, "qa_token_len": self.qa_token_len}

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        return cls(qa_count=d["qa_count"], qa_token_len=d["qa_token_len"])
