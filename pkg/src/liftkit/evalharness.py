"""Needle-in-a-haystack evaluation and LLM-as-judge scoring.

Builds (length, depth) needle cases from a user-supplied filler corpus,
scores responses by the three-keyword rule, judges free-form answers with
a fixed True/False prompt, and sweeps a length x depth matrix through an
engine callback.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from .chat import ChatCompletionsClient, TransportError
from .prompt_assets import asset_text, render
from .segmenter import SegmenterConfig, estimate_tokens, sentence_texts
from .types import Document, NiahCase, _require

NEEDLE = (
    "The best thing to do in San Francisco is eat a sandwich and sit in "
    "Dolores Park on a sunny day."
)
NIAH_QUESTION = "What is the best thing to do in San Francisco?"
NIAH_KEYWORDS = ("sandwich", "Dolores Park", "sunny")

_INSTANCES_PER_CASE = 5


class FillerTooShort(RuntimeError):
    """The filler corpus cannot supply the requested token length."""


class JudgeUnparseable(RuntimeError):
    """The judge kept replying with something other than True/False."""


@dataclass(frozen=True)
class JudgeConfig:
    """Endpoint settings for the binary semantic-equivalence judge."""

    endpoint_url: str
    model_name: str
    retries: int = 2
    api_key_env: str = "LIFT_JUDGE_API_KEY"

    def __post_init__(self) -> None:
        _require(self.retries >= 0, "retries", "must be >= 0")

    def to_dict(self) -> dict:
        return {
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "retries": self.retries,
            "api_key_env": self.api_key_env,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JudgeConfig":
        return cls(**d)


def score_niah_response(response: str) -> bool:
    """Case-insensitive substring match of all three needle keywords."""
    lowered = response.lower()
    return all(keyword.lower() in lowered for keyword in NIAH_KEYWORDS)


def judge_prompt(question: str, ground_truth: str, response: str) -> str:
    return render(
        asset_text("judge.txt"),
        {"question": question, "ground_truth": ground_truth, "response": response},
    )


def judge_answer(
    question: str,
    ground_truth: str,
    response: str,
    cfg: JudgeConfig,
    client: ChatCompletionsClient | None = None,
) -> bool:
    """Ask the judge whether response and ground truth agree semantically.

    The reply is trimmed and must be exactly ``True`` or ``False``; anything
    else is retried up to ``cfg.retries`` times, then JudgeUnparseable is
    raised. Transport errors are retried the same way and re-raised last.
    """
    if client is None:
        client = ChatCompletionsClient(
            cfg.endpoint_url, cfg.model_name, api_key_env=cfg.api_key_env
        )
    prompt = judge_prompt(question, ground_truth, response)
    last_transport: TransportError | None = None
    for _ in range(cfg.retries + 1):
        try:
            reply = client.complete(
                [{"role": "user", "content": prompt}], temperature=0.0, max_tokens=8
            )
        except TransportError as exc:
            last_transport = exc
            continue
        last_transport = None
        verdict = reply.strip()
        if verdict == "True":
            return True
        if verdict == "False":
            return False
    if last_transport is not None:
        raise last_transport
    raise JudgeUnparseable(f"judge for {question!r} never replied True/False")


def _slice_filler(
    sentences: list[str],
    length_l: int,
    est: Callable[[str], int],
    seed: int,
    length_key: str,
) -> list[list[str]]:
    """Five distinct sentence sequences: disjoint slices when the corpus is
    big enough, else differently seeded shuffles of sentence order."""
    total = est(" ".join(sentences))
    per_instance = 1.1 * length_l
    if total >= _INSTANCES_PER_CASE * per_instance:
        slices: list[list[str]] = []
        current: list[str] = []
        for sentence in sentences:
            current.append(sentence)
            if est(" ".join(current)) >= per_instance and len(slices) < _INSTANCES_PER_CASE:
                slices.append(current)
                current = []
        if len(slices) >= _INSTANCES_PER_CASE:
            return slices[:_INSTANCES_PER_CASE]
    out: list[list[str]] = []
    seen: set[tuple[str, ...]] = set()
    salt = 0
    while len(out) < _INSTANCES_PER_CASE:
        rng = random.Random(f"{seed}:{length_key}:{len(out)}:{salt}")
        shuffled = list(sentences)
        rng.shuffle(shuffled)
        key = tuple(shuffled)
        if key in seen:
            salt += 1
            continue
        seen.add(key)
        out.append(shuffled)
    return out


def _fit_body(sentences: list[str], length_l: int, est: Callable[[str], int]) -> list[str]:
    """Pick filler sentences so that body + needle lands within 2% of the target."""

    def total(body: list[str]) -> int:
        return est(" ".join(body + [NEEDLE]))

    body: list[str] = []
    i = 0
    while i < len(sentences) and total(body + [sentences[i]]) <= length_l:
        body.append(sentences[i])
        i += 1
    if total(body) < 0.98 * length_l:
        if i >= len(sentences):
            raise FillerTooShort(
                f"filler slice supplies {total(body)} tokens; need ~{length_l}"
            )
        fragment: list[str] = []
        for word in sentences[i].split():
            if total(body + [" ".join(fragment + [word])]) > length_l:
                break
            fragment.append(word)
        if fragment:
            body.append(" ".join(fragment))
    if not 0.98 * length_l <= total(body) <= 1.02 * length_l:
        raise FillerTooShort(
            f"could not assemble within 2% of {length_l} tokens (got {total(body)})"
        )
    return body


def build_niah_case(
    length_l: int,
    depth_d: float,
    filler_corpus: str,
    seed: int,
    seg_cfg: SegmenterConfig | None = None,
) -> NiahCase:
    """Build the 5-instance needle case for one (length, depth) cell.

    The needle lands at the sentence boundary nearest to
    ``depth_d/100 * length_l`` estimated tokens; each instance's total
    estimate stays within 2% of the target length.
    """
    _require(0 <= depth_d <= 100, "depth_d", "must be in [0, 100]")
    cfg = seg_cfg or SegmenterConfig()

    def est(text: str) -> int:
        return estimate_tokens(text, cfg.token_estimator)

    if est(filler_corpus) < length_l:
        raise FillerTooShort(
            f"filler corpus has ~{est(filler_corpus)} tokens; need at least {length_l}"
        )
    sentences = [s.strip() for s in sentence_texts(filler_corpus) if s.strip()]
    sentences = [s for s in sentences if NEEDLE not in s]
    slices = _slice_filler(sentences, length_l, est, seed, f"{length_l}:{depth_d}")

    instances = []
    target_tokens = int(depth_d / 100.0 * length_l)
    for i, slice_sentences in enumerate(slices):
        body = _fit_body(slice_sentences, length_l, est)
        prefix_counts = [est(" ".join(body[:k])) for k in range(len(body) + 1)]
        insert_at = min(
            range(len(body) + 1), key=lambda k: abs(prefix_counts[k] - target_tokens)
        )
        text = " ".join(body[:insert_at] + [NEEDLE] + body[insert_at:])
        instances.append(
            Document(
                doc_id=f"niah-L{length_l}-D{int(depth_d)}-i{i}",
                text=text,
                benchmark_kind="niah",
                approx_token_count=est(text),
            )
        )
    return NiahCase(
        length_l=length_l,
        depth_d=depth_d,
        needle=NEEDLE,
        question=NIAH_QUESTION,
        instances=tuple(instances),
    )


@dataclass(frozen=True)
class CellResult:
    """Outcome of one (length, depth) cell: accuracy over 5 instances."""

    length_l: int
    depth_d: float
    accuracy: float | None
    correct_count: int
    instance_records: tuple[dict, ...]
    error: str | None = None

    def __post_init__(self) -> None:
        if self.accuracy is not None:
            _require(
                abs(self.accuracy - self.correct_count / _INSTANCES_PER_CASE) < 1e-12,
                "accuracy",
                "must equal correct_count / 5",
            )

    def to_dict(self) -> dict:
        return {
            "length_l": self.length_l,
            "depth_d": self.depth_d,
            "accuracy": self.accuracy,
            "correct_count": self.correct_count,
            "instance_records": list(self.instance_records),
            "error": self.error,
        }


@dataclass(frozen=True)
class NiahReport:
    """Accuracy grid over every requested (length, depth) cell."""

    lengths: tuple[int, ...]
    depths: tuple[float, ...]
    cells: tuple[CellResult, ...]

    def cell(self, length_l: int, depth_d: float) -> CellResult:
        for c in self.cells:
            if c.length_l == length_l and c.depth_d == depth_d:
                return c
        raise KeyError((length_l, depth_d))

    def to_csv(self) -> str:
        lines = ["length,depth,accuracy"]
        for c in self.cells:
            acc = "" if c.accuracy is None else f"{c.accuracy:.1f}"
            lines.append(f"{c.length_l},{c.depth_d:g},{acc}")
        return "\n".join(lines) + "\n"

    def render_heatmap(self) -> str:
        """Plain-text accuracy grid, depths down the side, lengths across."""
        width = max(7, max(len(str(length)) for length in self.lengths) + 2)
        header = "depth\\len".ljust(10) + "".join(str(length).rjust(width) for length in self.lengths)
        lines = [header]
        for depth in self.depths:
            row = f"{depth:g}".ljust(10)
            for length in self.lengths:
                c = self.cell(length, depth)
                row += ("fail" if c.accuracy is None else f"{c.accuracy:.1f}").rjust(width)
            lines.append(row)
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "lengths": list(self.lengths),
            "depths": list(self.depths),
            "cells": [c.to_dict() for c in self.cells],
        }


def run_niah_matrix(
    lengths: Sequence[int],
    depths: Sequence[float],
    engine_run_fn: Callable[[Document, str], str],
    seed: int,
    *,
    filler_corpus: str,
    seg_cfg: SegmenterConfig | None = None,
    cell_parallelism: int = 1,
) -> NiahReport:
    """Sweep the full matrix, one independent engine run per instance.

    ``engine_run_fn(instance_document, question)`` must return the model's
    context-free answer text. A failing cell is recorded with its error
    instead of halting the rest of the matrix.
    """
    _require(len(lengths) > 0, "lengths", "must be non-empty")
    _require(len(depths) > 0, "depths", "must be non-empty")

    def run_cell(length_l: int, depth_d: float) -> CellResult:
        try:
            case = build_niah_case(length_l, depth_d, filler_corpus, seed, seg_cfg)
            correct = 0
            records = []
            for instance in case.instances:
                response = engine_run_fn(instance, case.question)
                ok = score_niah_response(response)
                correct += int(ok)
                records.append(
                    {"doc_id": instance.doc_id, "correct": ok, "response": response[:2000]}
                )
            return CellResult(
                length_l=length_l,
                depth_d=depth_d,
                accuracy=correct / _INSTANCES_PER_CASE,
                correct_count=correct,
                instance_records=tuple(records),
            )
        except Exception as exc:  # failed cells are reported, not fatal
            return CellResult(
                length_l=length_l,
                depth_d=depth_d,
                accuracy=None,
                correct_count=0,
                instance_records=(),
                error=f"{type(exc).__name__}: {exc}",
            )

    grid = [(length, depth) for length in lengths for depth in depths]
    if cell_parallelism > 1:
        with ThreadPoolExecutor(max_workers=cell_parallelism) as pool:
            cells = list(pool.map(lambda ld: run_cell(*ld), grid))
    else:
        cells = [run_cell(length, depth) for length, depth in grid]
    return NiahReport(lengths=tuple(lengths), depths=tuple(depths), cells=tuple(cells))
