"""Shared fixtures: scripted generator endpoints and corpus builders."""

from __future__ import annotations

import json
import random

import pytest

from liftkit import GenerationConfig, SegmenterConfig, generate_for_sentence, split_sentences
from liftkit.chat import TransportError
from liftkit.evalharness import NEEDLE, NIAH_QUESTION


def extract_sentence(messages: list[dict]) -> tuple[str, int]:
    """Pull the target sentence and requested pair count out of a prompt."""
    user = next(m["content"] for m in messages if m["role"] == "user")
    sentence = user.split("The last part of the paragraph:\n", 1)[1].split("\n\nGenerate ", 1)[0]
    m = int(user.rsplit("Generate ", 1)[1].split()[0])
    return sentence, m


class ExtractiveChat:
    """Deterministic scripted generator: m echo QAs per sentence."""

    def __init__(self):
        self.calls = 0
        self.seen_sentences: list[str] = []

    def complete(self, messages, temperature=0.7, max_tokens=1024):
        self.calls += 1
        sentence, m = extract_sentence(messages)
        self.seen_sentences.append(sentence)
        pairs = [
            {"question": f"What does the text say here (form {i})?", "answer": sentence.strip()}
            for i in range(m)
        ]
        return json.dumps({"qa_list": pairs})


class NeedleAwareChat:
    """Scripted generator that saturates the needle sentence.

    The needle sentence yields m QAs whose answer is the needle itself
    (one of them asking the exact evaluation question); every other
    sentence yields m QAs about its first word.
    """

    def __init__(self):
        self.calls = 0

    def complete(self, messages, temperature=0.7, max_tokens=1024):
        self.calls += 1
        sentence, m = extract_sentence(messages)
        if NEEDLE in sentence:
            pairs = [
                {"question": f"Needle question variant {i}?", "answer": NEEDLE}
                for i in range(m - 1)
            ]
            pairs.append({"question": NIAH_QUESTION, "answer": NEEDLE})
        else:
            first = sentence.split()[0]
            pairs = [
                {"question": f"Which word opens this part (form {i})?", "answer": first}
                for i in range(m)
            ]
        return json.dumps({"qa_list": pairs})


class FlakyChat:
    """Fails the first ``failures`` calls with a transport error, then echoes."""

    def __init__(self, failures: int):
        self.failures = failures
        self.calls = 0
        self._inner = ExtractiveChat()

    def complete(self, messages, temperature=0.7, max_tokens=1024):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("scripted outage")
        return self._inner.complete(messages, temperature, max_tokens)


class MalformedChat:
    """Always replies with something no parser can use."""

    def __init__(self):
        self.calls = 0

    def complete(self, messages, temperature=0.7, max_tokens=1024):
        self.calls += 1
        return "I would rather chat about the weather."


def make_filler(seed: int = 7, n_sentences: int = 400) -> str:
    """Deterministic distractor corpus of short capitalized sentences."""
    rng = random.Random(seed)
    words = [
        "alpha", "bravo", "candle", "delta", "ember", "forest", "garnet",
        "harbor", "island", "juniper", "kestrel", "lantern", "meadow",
        "nectar", "orchid", "prairie", "quarry", "raven", "saffron", "thicket",
    ]
    sentences = []
    for i in range(n_sentences):
        body = " ".join(rng.choice(words) for _ in range(rng.randint(8, 16)))
        sentences.append(body.capitalize() + f" marker {i}.")
    return " ".join(sentences)


def make_plain_doc_text(n_sentences: int = 20) -> str:
    return " ".join(
        f"Fact number {i} concerns the {['tide', 'moon', 'reef', 'dune'][i % 4]} on day {i}."
        for i in range(n_sentences)
    )


def serial_reference_item_keys(doc, gen_cfg: GenerationConfig, seg_cfg: SegmenterConfig,
                               chat_factory) -> list[str]:
    """Independent oracle: generate everything first, then enumerate items.

    Returns the multiset (sorted list) of per-epoch item keys a training
    epoch must contain, computed without touching the pipeline machinery.
    """
    keys: list[str] = []
    for unit in split_sentences(doc, seg_cfg):
        outcome = generate_for_sentence(unit, gen_cfg, chat_factory())
        for pair in outcome.pairs:
            keys.append(f"qa:{pair.sentence_index}:{pair.qa_index}")
    return sorted(keys)


@pytest.fixture()
def extractive_chat():
    return ExtractiveChat()


@pytest.fixture()
def filler_corpus():
    return make_filler()
