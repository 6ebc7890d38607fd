"""The asynchronous producer-consumer training engine.

Epoch 1 streams QA pairs from a pool of generator calls straight into
mini-batches while the trainer consumes them; later epochs replay the
on-disk cache in canonical (sentence_index, qa_index) order. The trainer
is driven strictly sequentially; producers run in parallel behind a
bounded queue.
"""

from __future__ import annotations

import queue
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import Iterable, Iterator

from .cache import CacheIncomplete, TaskCache
from .chat import ChatCompletionsClient
from .segmenter import SegmenterConfig, chunk_raw, split_sentences
from .taskgen import GenerationConfig, GenerationOutcome, generate_for_sentence
from .trainer.protocol import Decoding, TrainerClient, TrainerEndpoint
from .types import (
    BatchLossReport,
    Document,
    MetricEvent,
    PipelineMetrics,
    QAPair,
    RawSegment,
    TaskBatch,
    TrainerJob,
    TrainingItem,
    ValidationError,
    _require,
)

PIPELINE_MODES = ("lift_qa", "finetune_raw", "lift_plus_segments")
BATCH_ORDERS = ("arrival_then_canonical", "always_canonical")

_SENTINEL = object()

QUESTION_WRAPPER = "Question: {question}\nAnswer:"


class NoTrainingData(RuntimeError):
    """Every sentence was skipped and no raw segments were in play."""


@dataclass(frozen=True)
class PipelineConfig:
    """Batching, epoch, queueing, and caching knobs for one run."""

    batch_size: int = 16
    epochs: int = 1
    queue_capacity: int = 64
    batch_order: str = "arrival_then_canonical"
    mode: str = "lift_qa"
    cache_dir: str = ".liftkit_cache"
    mix_ratio: float = 0.1

    def __post_init__(self) -> None:
        _require(self.batch_size >= 1, "batch_size", "must be >= 1")
        _require(self.epochs >= 1, "epochs", "must be >= 1")
        _require(
            self.queue_capacity >= self.batch_size,
            "queue_capacity",
            "must be >= batch_size",
        )
        _require(self.batch_order in BATCH_ORDERS, "batch_order", f"must be one of {BATCH_ORDERS}")
        _require(self.mode in PIPELINE_MODES, "mode", f"must be one of {PIPELINE_MODES}")
        _require(0 <= self.mix_ratio < 1, "mix_ratio", "must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "queue_capacity": self.queue_capacity,
            "batch_order": self.batch_order,
            "mode": self.mode,
            "cache_dir": self.cache_dir,
            "mix_ratio": self.mix_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(**d)


class MetricsLog:
    """Thread-safe event accumulator; events are timestamped at source."""

    def __init__(self):
        self._t0 = time.perf_counter()
        self._events: list[MetricEvent] = []
        self._lock = threading.Lock()

    def record(self, kind: str) -> None:
        event = MetricEvent(event_kind=kind, wall_clock_time=time.perf_counter() - self._t0)
        with self._lock:
            self._events.append(event)

    def snapshot(self) -> PipelineMetrics:
        with self._lock:
            events = sorted(self._events, key=lambda e: e.wall_clock_time)
        return PipelineMetrics(events=tuple(events))


def item_key(item: TrainingItem) -> str:
    """Compact per-run identity of a training item, for reports and digests."""
    if isinstance(item, QAPair):
        return f"qa:{item.sentence_index}:{item.qa_index}"
    return f"seg:{item.segment_index}"


@dataclass(frozen=True)
class BatchRecord:
    """What was trained in one batch, plus the loss the trainer reported."""

    epoch: int
    batch_index: int
    source: str
    item_keys: tuple[str, ...]
    mean_loss: float
    item_count: int

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "batch_index": self.batch_index,
            "source": self.source,
            "item_keys": list(self.item_keys),
            "mean_loss": self.mean_loss,
            "item_count": self.item_count,
        }


@dataclass(frozen=True)
class RunReport:
    """Structured record of one full run: config echo, losses, events, answers."""

    doc_id: str
    mode: str
    adapter_ref: str
    config: dict
    batches: tuple[BatchRecord, ...]
    metrics: PipelineMetrics
    skipped_sentences: tuple[dict, ...]
    answers: tuple[dict, ...]
    seed: int

    @property
    def loss_reports(self) -> list[BatchLossReport]:
        return [
            BatchLossReport(
                epoch=b.epoch,
                batch_index=b.batch_index,
                mean_loss=b.mean_loss,
                item_count=b.item_count,
            )
            for b in self.batches
        ]

    def epoch_item_keys(self, epoch: int) -> list[str]:
        return [key for b in self.batches if b.epoch == epoch for key in b.item_keys]

    def epoch_mean_loss(self, epoch: int) -> float:
        total = sum(b.mean_loss * b.item_count for b in self.batches if b.epoch == epoch)
        count = sum(b.item_count for b in self.batches if b.epoch == epoch)
        return total / count

    @property
    def ttft(self) -> float | None:
        return self.metrics.ttft

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "mode": self.mode,
            "adapter_ref": self.adapter_ref,
            "config": self.config,
            "batches": [b.to_dict() for b in self.batches],
            "metrics": self.metrics.to_dict(),
            "skipped_sentences": list(self.skipped_sentences),
            "answers": list(self.answers),
            "seed": self.seed,
        }


def batch_source(items: Iterable[TrainingItem]) -> str:
    kinds = {"qa" if isinstance(i, QAPair) else "raw_segment" for i in items}
    return kinds.pop() if len(kinds) == 1 else "mixed"


def assemble_batches(
    items: Iterable[TrainingItem],
    batch_size: int,
    epoch: int = 1,
) -> Iterator[TaskBatch]:
    """Group a stream into order-preserving batches; only the last may be short."""
    _require(batch_size >= 1, "batch_size", "must be >= 1")
    current: list[TrainingItem] = []
    batch_index = 0
    for item in items:
        current.append(item)
        if len(current) == batch_size:
            yield TaskBatch(epoch, batch_index, tuple(current), batch_source(current))
            batch_index += 1
            current = []
    if current:
        yield TaskBatch(epoch, batch_index, tuple(current), batch_source(current))


def mix_segments(
    qa_stream: Iterable[QAPair],
    segments: list[RawSegment],
    ratio: float,
    seed: int = 0,
) -> Iterator[TrainingItem]:
    """Interleave raw segments into a QA stream at roughly ``ratio`` of items.

    Deterministic for a given seed: the seed only sets the phase of the
    even spacing. Leftover segments flush after the QA stream ends, and an
    empty QA stream yields the segments in order.
    """
    _require(0 <= ratio < 1, "ratio", "must be in [0, 1)")
    qa_iter = iter(qa_stream)
    seg_pos = 0
    if ratio <= 0:
        yield from qa_iter
        return
    credit = random.Random(seed).random()
    while True:
        credit += ratio
        if credit >= 1.0 and seg_pos < len(segments):
            yield segments[seg_pos]
            seg_pos += 1
            credit -= 1.0
            continue
        qa = next(qa_iter, None)
        if qa is None:
            break
        yield qa
    while seg_pos < len(segments):
        yield segments[seg_pos]
        seg_pos += 1


def replay_from_cache(
    doc_id: str,
    pipe_cfg: PipelineConfig,
    epoch: int = 1,
) -> list[TaskBatch]:
    """Rebuild canonical-order batches from a complete cache, offline.

    Raises :class:`CacheIncomplete` if the completeness marker is absent.
    Two invocations produce byte-identical batch encodings.
    """
    snapshot = TaskCache(pipe_cfg.cache_dir).load(doc_id)
    if not snapshot.complete:
        raise CacheIncomplete(f"no completeness marker for {doc_id!r}")
    return list(assemble_batches(snapshot.canonical_pairs(), pipe_cfg.batch_size, epoch))


class _ProducerPool:
    """Runs generation for the sentences that still need it, feeding a queue."""

    def __init__(
        self,
        units,
        gen_cfg: GenerationConfig,
        chat_client,
        cache: TaskCache,
        out_queue: "queue.Queue",
        metrics: MetricsLog,
    ):
        self.units = units
        self.gen_cfg = gen_cfg
        self.chat_client = chat_client
        self.cache = cache
        self.queue = out_queue
        self.metrics = metrics
        self.outcomes: dict[int, GenerationOutcome] = {}
        self._outcome_lock = threading.Lock()
        self._futures = []
        self._executor: ThreadPoolExecutor | None = None
        self._feeder: threading.Thread | None = None

    def _produce(self, unit) -> None:
        self.metrics.record("sentence_dispatched")
        outcome = generate_for_sentence(unit, self.gen_cfg, self.chat_client)
        self.cache.append_pairs(list(outcome.pairs))
        with self._outcome_lock:
            self.outcomes[unit.sentence_index] = outcome
        for pair in outcome.pairs:
            self.metrics.record("qa_arrived")
            self.queue.put(pair)

    def start(self) -> None:
        self._executor = ThreadPoolExecutor(
            max_workers=self.gen_cfg.request_parallelism,
            thread_name_prefix="qa-producer",
        )
        self._futures = [self._executor.submit(self._produce, u) for u in self.units]

        def _feed_sentinel():
            wait(self._futures)
            self.queue.put(_SENTINEL)

        self._feeder = threading.Thread(target=_feed_sentinel, daemon=True)
        self._feeder.start()

    def finish(self) -> None:
        """Surface producer exceptions (configuration errors only)."""
        for f in self._futures:
            f.result()
        if self._executor is not None:
            self._executor.shutdown()

    def abort_drain(self) -> None:
        """Unblock producers after a consumer-side failure, then shut down."""
        while not all(f.done() for f in self._futures):
            try:
                self.queue.get(timeout=0.05)
            except queue.Empty:
                pass
        while True:
            try:
                self.queue.get_nowait()
            except queue.Empty:
                break
        if self._executor is not None:
            self._executor.shutdown(wait=False)


def _queue_stream(q: "queue.Queue") -> Iterator[QAPair]:
    while True:
        item = q.get()
        if item is _SENTINEL:
            return
        yield item


def run_lift(
    doc: Document,
    gen_cfg: GenerationConfig,
    seg_cfg: SegmenterConfig,
    pipe_cfg: PipelineConfig,
    job: TrainerJob,
    trainer: TrainerEndpoint | TrainerClient,
    *,
    questions: Iterable[str] = (),
    chat_client: ChatCompletionsClient | None = None,
    seed: int = 0,
    generate_max_tokens: int = 64,
    decoding: Decoding = Decoding(),
) -> RunReport:
    """Run the full workflow on one document and answer questions context-free.

    Epoch 1 trains on items as they arrive (or from the cache when the
    document's generation already completed); epochs two onward read the
    cache in canonical order. Returns the report with every batch loss,
    the metrics event log, the adapter reference, and the answers.
    """
    client = TrainerClient(trainer) if isinstance(trainer, TrainerEndpoint) else trainer
    metrics = MetricsLog()
    metrics.record("input_submitted")

    if pipe_cfg.mode != "finetune_raw":
        if gen_cfg.prompt_kind != doc.benchmark_kind:
            raise ValidationError(
                "prompt_kind",
                f"{gen_cfg.prompt_kind!r} does not match document kind {doc.benchmark_kind!r}",
            )
        if chat_client is None and not gen_cfg.endpoint_url:
            raise ValidationError("endpoint_url", "generator endpoint required in this mode")
        if chat_client is None:
            chat_client = ChatCompletionsClient(gen_cfg.endpoint_url, gen_cfg.model_name)

    handle = client.create_job(job)
    tokenize = client.tokenize if seg_cfg.token_estimator == "external" else None
    units = split_sentences(doc, seg_cfg)

    segments: list[RawSegment] = []
    if pipe_cfg.mode in ("finetune_raw", "lift_plus_segments"):
        segments = chunk_raw(doc, seg_cfg, tokenize)

    batch_records: list[BatchRecord] = []
    skipped: list[dict] = []

    def train_stream(items: Iterable[TrainingItem], epoch: int) -> None:
        for batch in assemble_batches(items, pipe_cfg.batch_size, epoch):
            metrics.record("batch_formed")
            report = client.train_batch(handle, batch)
            metrics.record("batch_trained")
            batch_records.append(
                BatchRecord(
                    epoch=batch.epoch,
                    batch_index=batch.batch_index,
                    source=batch.source,
                    item_keys=tuple(item_key(i) for i in batch.items),
                    mean_loss=report.mean_loss,
                    item_count=report.item_count,
                )
            )

    def canonical_items() -> list[TrainingItem]:
        if pipe_cfg.mode == "finetune_raw":
            return list(segments)
        pairs = TaskCache(pipe_cfg.cache_dir).load(doc.doc_id).canonical_pairs()
        if pipe_cfg.mode == "lift_plus_segments":
            return list(mix_segments(pairs, segments, pipe_cfg.mix_ratio, seed))
        return list(pairs)

    if pipe_cfg.mode == "finetune_raw":
        train_stream(list(segments), 1)
    else:
        cache = TaskCache(pipe_cfg.cache_dir)
        snapshot = cache.load(doc.doc_id)
        if snapshot.complete:
            cache.check_compatible(
                snapshot.marker,
                n_sentences=len(units),
                qas_per_sentence=gen_cfg.qas_per_sentence,
                prompt_kind=gen_cfg.prompt_kind,
                generator_model=gen_cfg.model_name,
            )
            skipped = [
                {"sentence_index": i} for i in snapshot.marker.get("skipped", [])
            ]
            train_stream(canonical_items(), 1)
        else:
            done_sentences = snapshot.sentences_with_pairs()
            pending_units = [u for u in units if u.sentence_index not in done_sentences]
            if pipe_cfg.batch_order == "always_canonical":
                for unit in pending_units:
                    metrics.record("sentence_dispatched")
                    outcome = generate_for_sentence(unit, gen_cfg, chat_client)
                    cache.append_pairs(list(outcome.pairs))
                    if outcome.status == "skipped":
                        skipped.append(
                            {
                                "sentence_index": unit.sentence_index,
                                "attempts": outcome.attempts,
                                "prompt_hash": _unit_prompt_hash(unit, gen_cfg),
                            }
                        )
                    for _ in outcome.pairs:
                        metrics.record("qa_arrived")
                items = canonical_items()
                if not items:
                    raise NoTrainingData(f"no training items for {doc.doc_id!r}")
                cache.write_marker(
                    doc.doc_id,
                    n_sentences=len(units),
                    skipped=[s["sentence_index"] for s in skipped],
                    qas_per_sentence=gen_cfg.qas_per_sentence,
                    prompt_kind=gen_cfg.prompt_kind,
                    generator_model=gen_cfg.model_name,
                )
                train_stream(items, 1)
            else:
                work_queue: "queue.Queue" = queue.Queue(maxsize=pipe_cfg.queue_capacity)
                pool = _ProducerPool(pending_units, gen_cfg, chat_client, cache, work_queue, metrics)
                # Pairs recovered from an interrupted run are available instantly.
                recovered = snapshot.canonical_pairs()
                pool.start()
                try:
                    arrival: Iterable[TrainingItem] = _queue_stream(work_queue)
                    if recovered:
                        def _with_recovered():
                            for p in recovered:
                                metrics.record("qa_arrived")
                                yield p
                            yield from _queue_stream(work_queue)

                        arrival = _with_recovered()
                    if pipe_cfg.mode == "lift_plus_segments":
                        arrival = mix_segments(arrival, segments, pipe_cfg.mix_ratio, seed)
                    train_stream(arrival, 1)
                except BaseException:
                    pool.abort_drain()
                    raise
                pool.finish()
                skipped = [
                    {
                        "sentence_index": i,
                        "attempts": o.attempts,
                        "prompt_hash": _unit_prompt_hash(o.unit, gen_cfg),
                    }
                    for i, o in sorted(pool.outcomes.items())
                    if o.status == "skipped"
                ]
                trained_any = bool(batch_records)
                if not trained_any:
                    raise NoTrainingData(f"every sentence of {doc.doc_id!r} was skipped")
                cache.write_marker(
                    doc.doc_id,
                    n_sentences=len(units),
                    skipped=[s["sentence_index"] for s in skipped],
                    qas_per_sentence=gen_cfg.qas_per_sentence,
                    prompt_kind=gen_cfg.prompt_kind,
                    generator_model=gen_cfg.model_name,
                )

    for epoch in range(2, pipe_cfg.epochs + 1):
        train_stream(canonical_items(), epoch)

    metrics.record("training_done")
    adapter_ref = client.finalize(handle)

    answers: list[dict] = []
    for i, question in enumerate(questions):
        text = client.generate(
            adapter_ref,
            QUESTION_WRAPPER.replace("{question}", question),
            max_tokens=generate_max_tokens,
            decoding=decoding,
        )
        if i == 0:
            metrics.record("first_answer_token")
        metrics.record("answer_done")
        answers.append({"question": question, "text": text})

    return RunReport(
        doc_id=doc.doc_id,
        mode=pipe_cfg.mode,
        adapter_ref=adapter_ref,
        config={
            "generator": gen_cfg.to_dict(),
            "segmenter": seg_cfg.to_dict(),
            "pipeline": pipe_cfg.to_dict(),
            "job": job.to_dict(),
            "decoding": decoding.to_dict(),
            "generate_max_tokens": generate_max_tokens,
        },
        batches=tuple(batch_records),
        metrics=metrics.snapshot(),
        skipped_sentences=tuple(skipped),
        answers=tuple(answers),
        seed=seed,
    )


def _unit_prompt_hash(unit, gen_cfg: GenerationConfig) -> str:
    from .taskgen import prompt_hash, prompt_messages

    return prompt_hash(prompt_messages(unit, gen_cfg))


def generate_to_cache(
    doc: Document,
    gen_cfg: GenerationConfig,
    seg_cfg: SegmenterConfig,
    pipe_cfg: PipelineConfig,
    chat_client: ChatCompletionsClient | None = None,
) -> dict:
    """Producer side only: fill the document's cache and write the marker.

    Safe to rerun: a completed cache makes no generator calls, and an
    interrupted one regenerates only the sentences that have no pairs yet.
    """
    if chat_client is None:
        if not gen_cfg.endpoint_url:
            raise ValidationError("endpoint_url", "generator endpoint required")
        chat_client = ChatCompletionsClient(gen_cfg.endpoint_url, gen_cfg.model_name)
    cache = TaskCache(pipe_cfg.cache_dir)
    units = split_sentences(doc, seg_cfg)
    snapshot = cache.load(doc.doc_id)
    if snapshot.complete:
        cache.check_compatible(
            snapshot.marker,
            n_sentences=len(units),
            qas_per_sentence=gen_cfg.qas_per_sentence,
            prompt_kind=gen_cfg.prompt_kind,
            generator_model=gen_cfg.model_name,
        )
        return {
            "doc_id": doc.doc_id,
            "n_sentences": len(units),
            "pairs": len(snapshot.pairs),
            "generated_now": 0,
            "skipped": snapshot.marker.get("skipped", []),
            "cache_path": str(cache.path_for(doc.doc_id)),
        }

    done = snapshot.sentences_with_pairs()
    pending = [u for u in units if u.sentence_index not in done]
    outcomes: dict[int, GenerationOutcome] = {}
    generated = 0

    def produce(unit) -> GenerationOutcome:
        outcome = generate_for_sentence(unit, gen_cfg, chat_client)
        cache.append_pairs(list(outcome.pairs))  # durable as soon as generated
        return outcome

    with ThreadPoolExecutor(max_workers=gen_cfg.request_parallelism) as pool:
        futures = {pool.submit(produce, u): u for u in pending}
        for future, unit in futures.items():
            outcome = future.result()
            outcomes[unit.sentence_index] = outcome
            generated += len(outcome.pairs)
    skipped = sorted(i for i, o in outcomes.items() if o.status == "skipped")
    cache.write_marker(
        doc.doc_id,
        n_sentences=len(units),
        skipped=skipped,
        qas_per_sentence=gen_cfg.qas_per_sentence,
        prompt_kind=gen_cfg.prompt_kind,
        generator_model=gen_cfg.model_name,
    )
    final = cache.load(doc.doc_id)
    return {
        "doc_id": doc.doc_id,
        "n_sentences": len(units),
        "pairs": len(final.pairs),
        "generated_now": generated,
        "skipped": skipped,
        "cache_path": str(cache.path_for(doc.doc_id)),
    }
