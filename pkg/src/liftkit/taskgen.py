"""Synthetic QA task generation.

Renders the per-sentence generator prompts, parses the JSON ``qa_list``
replies, and wraps the call-with-retries loop. A sentence whose generation
keeps failing degrades to a ``skipped`` outcome; it never aborts a run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from . import prompt_assets
from .chat import ChatCompletionsClient, TransportError
from .types import CostModel, QAPair, SentenceUnit, ValidationError, _require, canonical_json

PROMPT_KINDS = ("squad", "niah", "generic")

_SYSTEM_ASSETS = {
    "squad": "qa_system_squad.txt",
    "niah": "qa_system_niah.txt",
    "generic": "qa_system_generic.txt",
}


class MalformedResponse(ValueError):
    """No well-formed qa_list could be extracted from the generator reply."""


class EmptyList(MalformedResponse):
    """The qa_list parsed but contained no usable pairs."""


@dataclass(frozen=True)
class GenerationConfig:
    """How to prompt the generator and how hard to push it."""

    qas_per_sentence: int = 5
    prompt_kind: str = "generic"
    endpoint_url: str = ""
    model_name: str = ""
    max_retries: int = 3
    request_parallelism: int = 4
    temperature: float = 0.7
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        _require(self.qas_per_sentence >= 1, "qas_per_sentence", "must be >= 1")
        _require(self.prompt_kind in PROMPT_KINDS, "prompt_kind", f"must be one of {PROMPT_KINDS}")
        _require(self.max_retries >= 0, "max_retries", "must be >= 0")
        _require(self.request_parallelism >= 1, "request_parallelism", "must be >= 1")

    def to_dict(self) -> dict:
        return {
            "qas_per_sentence": self.qas_per_sentence,
            "prompt_kind": self.prompt_kind,
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "max_retries": self.max_retries,
            "request_parallelism": self.request_parallelism,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        return cls(**d)


@dataclass(frozen=True)
class GenerationOutcome:
    """Terminal result of generating QAs for one sentence."""

    unit: SentenceUnit
    pairs: tuple[QAPair, ...]
    status: str  # ok | partial | skipped
    attempts: int

    def __post_init__(self) -> None:
        _require(self.status in ("ok", "partial", "skipped"), "status", "unknown status")
        if self.status == "skipped":
            _require(len(self.pairs) == 0, "pairs", "skipped outcome must carry no pairs")
        else:
            _require(len(self.pairs) >= 1, "pairs", "non-skipped outcome needs pairs")
        object.__setattr__(self, "pairs", tuple(self.pairs))


def render_prompt(unit: SentenceUnit, cfg: GenerationConfig) -> tuple[str, str]:
    """Render the (system, user) generator messages for one sentence.

    The paragraph shown to the generator is the preceding-context window
    followed by the target sentence itself.
    """
    if cfg.prompt_kind not in _SYSTEM_ASSETS:
        raise ValidationError("prompt_kind", f"unknown prompt kind {cfg.prompt_kind!r}")
    subs = {
        "num_questions": str(cfg.qas_per_sentence),
        "paragraph": unit.preceding_context + unit.sentence_text,
        "target_sentence": unit.sentence_text,
    }
    system = prompt_assets.render(prompt_assets.asset_text(_SYSTEM_ASSETS[cfg.prompt_kind]), subs)
    user = prompt_assets.render(prompt_assets.asset_text("qa_user.txt"), subs)
    return system, user


def prompt_messages(unit: SentenceUnit, cfg: GenerationConfig) -> list[dict]:
    system, user = render_prompt(unit, cfg)
    return [{"role": "system", "content": system}, {"role": "user", "content": user}]


def prompt_hash(messages: list[dict]) -> str:
    return hashlib.sha256(canonical_json(messages).encode("utf-8")).hexdigest()


def _strip_decorations(raw_text: str) -> str:
    """Drop surrounding whitespace and a code fence if the reply is fenced."""
    text = raw_text.strip()
    if text.startswith("```"):
        first_newline = text.find("\n")
        closing = text.rfind("```")
        if first_newline != -1 and closing > first_newline:
            text = text[first_newline + 1 : closing].strip()
    return text


def _first_qa_object(text: str) -> dict | None:
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text, idx)
        except json.JSONDecodeError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict) and "qa_list" in obj:
            return obj
        idx = text.find("{", idx + 1)
    return None


def parse_qa_response(raw_text: str, m: int) -> list[tuple[str, str]]:
    """Extract up to ``m`` (question, answer) pairs from a generator reply.

    Tolerates code fences and surrounding prose; takes the first
    well-formed object carrying a ``qa_list`` key. Raises
    :class:`EmptyList` for an empty list and :class:`MalformedResponse`
    when nothing usable can be extracted.
    """
    obj = _first_qa_object(_strip_decorations(raw_text))
    if obj is None:
        raise MalformedResponse("no qa_list object found in response")
    qa_list = obj["qa_list"]
    if not isinstance(qa_list, list):
        raise MalformedResponse("qa_list is not a list")
    if not qa_list:
        raise EmptyList("qa_list is empty")
    pairs: list[tuple[str, str]] = []
    for item in qa_list:
        if not isinstance(item, dict):
            continue
        question = item.get("question")
        answer = item.get("answer")
        if isinstance(question, str) and isinstance(answer, str) and question.strip() and answer.strip():
            pairs.append((question, answer))
        if len(pairs) == m:
            break
    if not pairs:
        raise MalformedResponse("qa_list held no items with string question and answer")
    return pairs


def generate_for_sentence(
    unit: SentenceUnit,
    cfg: GenerationConfig,
    client: ChatCompletionsClient | None = None,
) -> GenerationOutcome:
    """Generate QA pairs for one sentence, retrying transient failures.

    Retries cover transport errors and malformed replies, up to
    ``cfg.max_retries`` extra attempts; after that the sentence is skipped
    rather than failing the run. Only configuration errors propagate.
    """
    if client is None:
        client = ChatCompletionsClient(cfg.endpoint_url, cfg.model_name)
    messages = prompt_messages(unit, cfg)
    digest = prompt_hash(messages)
    attempts = 0
    for _ in range(cfg.max_retries + 1):
        attempts += 1
        try:
            raw = client.complete(
                messages,
                temperature=cfg.temperature,
                max_tokens=cfg.max_output_tokens,
            )
            parsed = parse_qa_response(raw, cfg.qas_per_sentence)
        except (TransportError, MalformedResponse):
            continue
        pairs = tuple(
            QAPair(
                doc_id=unit.doc_id,
                sentence_index=unit.sentence_index,
                qa_index=i,
                question=q,
                answer=a,
                generator_model=cfg.model_name,
                prompt_hash=digest,
            )
            for i, (q, a) in enumerate(parsed)
        )
        status = "ok" if len(pairs) == cfg.qas_per_sentence else "partial"
        return GenerationOutcome(unit=unit, pairs=pairs, status=status, attempts=attempts)
    return GenerationOutcome(unit=unit, pairs=(), status="skipped", attempts=attempts)


def estimate_training_cost(c: CostModel, split: bool) -> int:
    """Training cost units for m QAs of length l: m*l^2 split, (m*l)^2 not."""
    if split:
        return c.qa_count * c.qa_token_len * c.qa_token_len
    return c.qa_count * c.qa_count * c.qa_token_len * c.qa_token_len
