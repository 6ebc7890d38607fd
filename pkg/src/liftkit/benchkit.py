"""Latency benchmarking: TTFT, schedule simulation, and cost crossover.

The simulator replays the producer-consumer schedule in integer
microseconds so event ordering is exact; ``pipelined=False`` models the
schedule where training starts only after all generation has finished.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .types import MetricEvent, PipelineMetrics, _require

MICROSECONDS = 1_000_000


class MissingEvent(RuntimeError):
    """A TTFT endpoint event is absent from the metrics log."""


@dataclass(frozen=True)
class CostParams:
    """Latency model parameters for simulation and crossover analysis.

    The ICL costs are supplied as functions of input length so callers can
    encode whatever prefill/attention scaling their hardware shows.
    """

    gen_latency_per_sentence: float
    producer_parallelism: int
    train_time_per_batch: float
    icl_prefill_cost: Callable[[int], float] | None = None
    icl_per_token_decode_cost: Callable[[int], float] | None = None
    lift_per_token_decode_cost: float = 0.0

    def __post_init__(self) -> None:
        _require(self.gen_latency_per_sentence >= 0, "gen_latency_per_sentence", "must be >= 0")
        _require(self.producer_parallelism >= 1, "producer_parallelism", "must be >= 1")
        _require(self.train_time_per_batch >= 0, "train_time_per_batch", "must be >= 0")
        _require(self.lift_per_token_decode_cost >= 0, "lift_per_token_decode_cost", "must be >= 0")


@dataclass(frozen=True)
class SimTimeline:
    """Result of one simulated run; all times in integer microseconds."""

    pipelined: bool
    events: tuple[tuple[str, int], ...]
    gen_span_us: int
    epoch1_done_us: int
    training_done_us: int
    first_answer_token_us: int
    n_batches_per_epoch: int

    @property
    def completion_us(self) -> int:
        return self.training_done_us

    def to_metrics(self) -> PipelineMetrics:
        return PipelineMetrics(
            events=tuple(
                MetricEvent(event_kind=kind, wall_clock_time=t / MICROSECONDS)
                for kind, t in sorted(self.events, key=lambda e: e[1])
            )
        )

    @property
    def metrics(self) -> PipelineMetrics:
        return self.to_metrics()


def simulate_schedule(
    n_sentences: int,
    params: CostParams,
    pipelined: bool,
    epochs: int = 1,
    batch_size: int = 16,
    m: int = 5,
) -> SimTimeline:
    """Simulate the generation+training schedule for one document.

    Each of ``n_sentences`` takes ``gen_latency_per_sentence`` on one of
    ``producer_parallelism`` workers and delivers ``m`` items on
    completion; the trainer runs batches sequentially, blocking while a
    batch is not yet full and production is still in flight. Serial mode
    holds all training until generation completes. Epochs past the first
    read from cache, so their items are available immediately.
    """
    _require(n_sentences >= 1, "n_sentences", "must be >= 1")
    _require(epochs >= 1, "epochs", "must be >= 1")
    _require(batch_size >= 1, "batch_size", "must be >= 1")
    _require(m >= 1, "m", "must be >= 1")

    g = round(params.gen_latency_per_sentence * MICROSECONDS)
    t = round(params.train_time_per_batch * MICROSECONDS)
    p = params.producer_parallelism

    events: list[tuple[str, int]] = [("input_submitted", 0)]
    arrivals: list[int] = []
    for i in range(n_sentences):
        start = g * (i // p)
        done = start + g
        events.append(("sentence_dispatched", start))
        for _ in range(m):
            arrivals.append(done)
            events.append(("qa_arrived", done))
    gen_span = arrivals[-1] if arrivals else 0

    total_items = n_sentences * m
    n_batches = math.ceil(total_items / batch_size)
    finish = 0
    for j in range(n_batches):
        last_item = min((j + 1) * batch_size, total_items) - 1
        available = arrivals[last_item]
        if not pipelined:
            available = max(available, gen_span)
        start = max(available, finish)
        events.append(("batch_formed", start))
        finish = start + t
        events.append(("batch_trained", finish))
    epoch1_done = finish

    for _ in range(epochs - 1):
        for _ in range(n_batches):
            events.append(("batch_formed", finish))
            finish += t
            events.append(("batch_trained", finish))
    training_done = finish
    events.append(("training_done", training_done))

    first_token = training_done + round(params.lift_per_token_decode_cost * MICROSECONDS)
    events.append(("first_answer_token", first_token))
    events.append(("answer_done", first_token))

    return SimTimeline(
        pipelined=pipelined,
        events=tuple(events),
        gen_span_us=gen_span,
        epoch1_done_us=epoch1_done,
        training_done_us=training_done,
        first_answer_token_us=first_token,
        n_batches_per_epoch=n_batches,
    )


def measure_ttft(run_fn: Callable[[], object]) -> float:
    """Run a full workflow and return first_answer_token - input_submitted.

    ``run_fn`` may return anything exposing pipeline metrics: a run
    report, a PipelineMetrics, or a simulated timeline.
    """
    result = run_fn()
    metrics = result
    if hasattr(result, "to_metrics"):
        metrics = result.to_metrics()
    elif hasattr(result, "metrics"):
        metrics = result.metrics
    ttft = metrics.ttft
    if ttft is None:
        raise MissingEvent("metrics lack input_submitted or first_answer_token")
    return ttft


@dataclass(frozen=True)
class CrossoverRow:
    output_len: int
    lift_total: float
    icl_total: float

    def to_dict(self) -> dict:
        return {
            "output_len": self.output_len,
            "lift_total": self.lift_total,
            "icl_total": self.icl_total,
        }


@dataclass(frozen=True)
class CrossoverResult:
    rows: tuple[CrossoverRow, ...]
    crossover_output_len: int | None

    def to_csv(self) -> str:
        lines = ["output_len,lift_total_s,icl_total_s"]
        for row in self.rows:
            lines.append(f"{row.output_len},{row.lift_total:.6f},{row.icl_total:.6f}")
        return "\n".join(lines) + "\n"


def crossover_analysis(
    params: CostParams,
    ttft_lift: float,
    output_lengths: Sequence[int],
    input_length: int,
) -> CrossoverResult:
    """Total-time comparison of the fine-tune-then-decode path against ICL.

    lift_total(k) = ttft_lift + k * lift_per_token_decode_cost;
    icl_total(k) = icl_prefill_cost(L) + k * icl_per_token_decode_cost(L).
    Also reports the smallest output length (>= 1) where lift wins, if any.
    """
    if params.icl_prefill_cost is None or params.icl_per_token_decode_cost is None:
        raise ValueError("crossover analysis needs both ICL cost functions")
    prefill = params.icl_prefill_cost(input_length)
    icl_per_token = params.icl_per_token_decode_cost(input_length)
    lift_per_token = params.lift_per_token_decode_cost

    def lift_total(k: int) -> float:
        return ttft_lift + k * lift_per_token

    def icl_total(k: int) -> float:
        return prefill + k * icl_per_token

    rows = tuple(CrossoverRow(k, lift_total(k), icl_total(k)) for k in output_lengths)

    crossover: int | None = None
    if icl_per_token > lift_per_token:
        threshold = (ttft_lift - prefill) / (icl_per_token - lift_per_token)
        candidate = max(1, math.floor(threshold) + 1)
        if lift_total(candidate) < icl_total(candidate):
            crossover = candidate
    elif lift_total(1) < icl_total(1):
        crossover = 1
    return CrossoverResult(rows=rows, crossover_output_len=crossover)
