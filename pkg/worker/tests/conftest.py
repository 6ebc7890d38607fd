"""Shared worker-test fixtures: base models, corpus builders, HTTP server."""

from __future__ import annotations

import random

import pytest
import torch

from lift_worker import LoraWorker, WorkerConfig, WorkerServer, build_base_model

torch.set_num_threads(2)

NEEDLE = (
    "The best thing to do in San Francisco is eat a sandwich and sit in "
    "Dolores Park on a sunny day."
)
NIAH_QUESTION = "What is the best thing to do in San Francisco?"
KEYWORDS = ("sandwich", "Dolores Park", "sunny")

PLACES = ["Lisbon", "Oslo", "Kyoto", "Denver", "Austin", "Porto", "Quito", "Cairo",
          "Dublin", "Boston", "Naples", "Seattle", "Madrid", "Vienna"]
ACTIVITIES = ["walk along the old harbor wall", "drink coffee by the river",
              "watch the boats from the stone bridge", "read a book under the elm trees",
              "ride the tram to the market square", "listen to street music at the fountain",
              "sketch the rooftops from the hill", "taste pastries at the corner bakery"]
NOUNS = ["harbor", "market", "garden", "museum", "bridge", "library", "station",
         "bakery", "fountain", "orchard", "lighthouse", "meadow"]
ADJS = ["quiet", "rainy", "bright", "windy", "foggy", "warm", "cold", "busy", "calm", "clear"]
NAMES = ["Ana", "Louis", "Mara", "Theo", "Nina", "Oscar", "Ruth", "Felix"]
VERBS = ["jog", "paint", "fish", "wander", "picnic", "cycle", "swim", "nap"]

# The needle's content words appear in pretraining only in unrelated
# sentences, so the needle *binding* can only come from fine-tuning.
KEYWORD_FILLER = [
    "A sandwich with plum jam makes a fine lunch near the quarry.",
    "The sunny terrace above the bakery opens after the morning fog lifts.",
    "Dolores once kept a small map of the Park gates in her coat pocket.",
    "San pedro cactus grows slowly, and Francisco waters it every second week.",
    "Park rangers count the herons that nest beside the sunny channel.",
]


def make_filler(seed: int = 7, n: int = 400) -> list[str]:
    rng = random.Random(seed)
    out = []
    for i in range(n):
        kind = i % 5
        if kind == 0:
            s = (f"The best thing to do in {rng.choice(PLACES)} is "
                 f"{rng.choice(ACTIVITIES)} on a {rng.choice(ADJS)} day.")
        elif kind == 1:
            s = (f"The {rng.choice(NOUNS)} near the {rng.choice(NOUNS)} is "
                 f"{rng.choice(ADJS)} in the early morning.")
        elif kind == 2:
            s = (f"{rng.choice(NAMES)} likes to {rng.choice(VERBS)} by the "
                 f"{rng.choice(NOUNS)} after breakfast.")
        elif kind == 3:
            s = (f"On a {rng.choice(ADJS)} afternoon the {rng.choice(NOUNS)} "
                 f"stays {rng.choice(ADJS)} and almost empty.")
        else:
            s = (f"People say the {rng.choice(NOUNS)} in {rng.choice(PLACES)} is "
                 f"the {rng.choice(ADJS)} one to visit.")
        out.append(s)
    rng2 = random.Random(seed + 1)
    for s in KEYWORD_FILLER * 6:
        out.insert(rng2.randrange(len(out)), s)
    return out


def build_instance(sentences: list[str], length_tokens: int = 1000, depth: float = 50):
    """One needle-at-depth document of roughly length_tokens estimated tokens."""
    est = lambda t: (len(t) + 3) // 4
    body: list[str] = []
    while est(" ".join(body + [NEEDLE])) <= length_tokens:
        body.append(sentences[len(body)])
    insert_at = min(
        range(len(body) + 1),
        key=lambda i: abs(est(" ".join(body[:i])) - depth / 100 * length_tokens),
    )
    return " ".join(body[:insert_at] + [NEEDLE] + body[insert_at:]), body


def needle_questions() -> list[str]:
    return [
        NIAH_QUESTION,
        "What is recommended as the best activity in San Francisco?",
        "What should a visitor do in San Francisco?",
        "Which activity is named the best in San Francisco?",
        "What does the text say is the best thing to do in San Francisco?",
        "According to the passage, what is the best thing to do in San Francisco?",
        "What is the top thing to do in San Francisco?",
        "Name the best thing to do in San Francisco.",
        "In San Francisco, what is the best thing to do?",
        "What activity is described as the best in San Francisco?",
    ]


def desk_qas(body: list[str]) -> list[dict]:
    """10 needle QAs spread among extractive distractor QAs."""
    qas = [{"kind": "qa", "question": q, "answer": NEEDLE} for q in needle_questions()]
    for i, s in enumerate(body):
        if s.startswith("The best thing to do in "):
            place = s.split("The best thing to do in ", 1)[1].split()[0]
            qas.append({"kind": "qa",
                        "question": f"What is the best thing to do in {place}?",
                        "answer": s})
        qas.append({"kind": "qa", "question": f"What does part {i} state?", "answer": s})
    random.Random(0).shuffle(qas)
    return qas


def job_payload(job_id: str, base_model: str = "tiny", rank: int = 8, alpha: float = 16.0,
                lr: float = 1e-3, epochs: int = 1, batch_size: int = 4, seed: int = 0) -> dict:
    return {
        "job_id": job_id,
        "base_model": base_model,
        "adapter": {"rank": rank, "alpha": alpha, "init_scheme": "b_zero"},
        "learning_rate": lr,
        "epochs": epochs,
        "batch_size": batch_size,
        "seed": seed,
        "loss_masking": "answer_only",
    }


def qa_batch(*answers: str, question: str = "What?", epoch: int = 1, batch_index: int = 0) -> dict:
    return {
        "epoch": epoch,
        "batch_index": batch_index,
        "items": [{"kind": "qa", "question": question, "answer": a} for a in answers],
    }


@pytest.fixture(scope="session")
def small_base():
    """Unpretrained tiny base for fast protocol tests."""
    corpus = " ".join(f"alpha beta gamma delta item {i} closes here." for i in range(40))
    return build_base_model(
        "tiny", corpus, d_model=64, n_layers=2, n_heads=2, max_seq_len=96, pretrain_steps=0
    )


@pytest.fixture(scope="session")
def desk_base():
    """Pretrained base for the desk-scale runs: knows the filler language,
    has the needle words in vocabulary, never saw the needle binding."""
    filler = make_filler()
    _, body = build_instance(filler)
    extra = " ".join(
        [NEEDLE, "Question: Answer:"]
        + needle_questions()
        + [f"What does part {i} state?" for i in range(len(body))]
    )
    return build_base_model(
        "tiny",
        " ".join(filler[:260]),
        d_model=128,
        n_layers=2,
        n_heads=4,
        max_seq_len=128,
        pretrain_steps=800,
        seed=0,
        extra_vocab_text=extra,
    )


@pytest.fixture()
def worker(small_base):
    return LoraWorker(WorkerConfig(models={"tiny": small_base}))


@pytest.fixture(scope="module")
def http_worker(small_base):
    worker = LoraWorker(WorkerConfig(models={"tiny": small_base}))
    with WorkerServer(worker) as server:
        yield worker, server.base_url
