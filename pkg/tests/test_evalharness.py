"""NIAH case construction, keyword scoring, judging, and the matrix sweep."""

import json

import pytest

from conftest import NeedleAwareChat, make_filler
from liftkit.chat import TransportError
from liftkit.evalharness import (
    NEEDLE,
    FillerTooShort,
    JudgeConfig,
    JudgeUnparseable,
    build_niah_case,
    judge_answer,
    run_niah_matrix,
    score_niah_response,
)
from liftkit.pipeline import PipelineConfig, run_lift
from liftkit.segmenter import SegmenterConfig, estimate_tokens, sentence_texts
from liftkit.taskgen import GenerationConfig
from liftkit.trainer import Decoding, MockTrainer, TrainerClient, TrainerEndpoint
from liftkit.types import AdapterConfig, TrainerJob


# All eight keyword combinations, plus casing, punctuation, and empties.
SCORER_TRUTH_TABLE = [
    ("eat a sandwich and sit in Dolores Park on a sunny day", True),
    ("Grab a SANDWICH, relax at dolores park, what a SUNNY afternoon", True),
    ("sandwich... Dolores Park... sunny...", True),
    ("eat a sandwich in Dolores Park", False),  # no "sunny"
    ("a sunny walk to Dolores Park", False),  # no "sandwich"
    ("a sandwich on a sunny day", False),  # no "Dolores Park"
    ("just a sandwich", False),
    ("just Dolores Park", False),
    ("just sunny weather", False),
    ("Dolores sunny sandwich Park", False),  # "Dolores Park" must be contiguous
    ("nothing relevant at all", False),
    ("", False),
]


class TestScorer:
    @pytest.mark.parametrize("response, expected", SCORER_TRUTH_TABLE)
    def test_truth_table(self, response, expected):
        assert score_niah_response(response) is expected

    def test_pure_and_permutation_insensitive(self):
        base = "sunny day, Dolores Park, sandwich"
        assert score_niah_response(base)
        assert score_niah_response("PREFIX " + base + " SUFFIX")


class TestBuildCase:
    def test_depth_zero_puts_needle_first(self, filler_corpus):
        case = build_niah_case(1000, 0, filler_corpus, seed=3)
        for inst in case.instances:
            assert inst.text.startswith(NEEDLE)

    def test_depth_hundred_puts_needle_last(self, filler_corpus):
        case = build_niah_case(1000, 100, filler_corpus, seed=3)
        for inst in case.instances:
            assert inst.text.endswith(NEEDLE)

    def test_mid_depth_token_index(self, filler_corpus):
        # Oracle: re-estimate the prefix before the needle; it must sit
        # within one sentence of the target position.
        case = build_niah_case(1000, 50, filler_corpus, seed=3)
        for inst in case.instances:
            prefix = inst.text.split(NEEDLE)[0]
            prefix_tokens = estimate_tokens(prefix, "chars_div_4")
            longest_sentence = max(
                estimate_tokens(s, "chars_div_4") for s in sentence_texts(inst.text)
            )
            assert abs(prefix_tokens - 500) <= longest_sentence

    def test_needle_exactly_once_and_length_within_2pct(self, filler_corpus):
        case = build_niah_case(1000, 25, filler_corpus, seed=9)
        for inst in case.instances:
            assert inst.text.count(NEEDLE) == 1
            assert 980 <= inst.approx_token_count <= 1020

    def test_instances_distinct(self, filler_corpus):
        case = build_niah_case(1000, 75, filler_corpus, seed=1)
        assert len({inst.text for inst in case.instances}) == 5

    def test_deterministic(self, filler_corpus):
        a = build_niah_case(1000, 50, filler_corpus, seed=4)
        b = build_niah_case(1000, 50, filler_corpus, seed=4)
        assert [i.text for i in a.instances] == [i.text for i in b.instances]

    def test_filler_too_short(self):
        with pytest.raises(FillerTooShort):
            build_niah_case(100000, 50, make_filler(n_sentences=40), seed=0)

    def test_shuffle_fallback_when_corpus_is_tight(self):
        # Corpus big enough for one instance but not five disjoint slices.
        case = build_niah_case(1000, 50, make_filler(n_sentences=120), seed=2)
        assert len({inst.text for inst in case.instances}) == 5


class _ScriptedJudge:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, messages, temperature=0.0, max_tokens=8):
        self.calls += 1
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


class TestJudge:
    CFG = JudgeConfig(endpoint_url="http://judge", model_name="judge-model", retries=1)

    def test_true_verdict(self):
        assert judge_answer("Q", "truth", "resp", self.CFG, _ScriptedJudge(["True"])) is True

    def test_false_with_whitespace(self):
        assert judge_answer("Q", "truth", "resp", self.CFG, _ScriptedJudge([" False\n"])) is False

    def test_unparseable_after_retries(self):
        judge = _ScriptedJudge(["It is correct.", "It is correct."])
        with pytest.raises(JudgeUnparseable):
            judge_answer("Q", "truth", "resp", self.CFG, judge)
        assert judge.calls == 2

    def test_recovers_on_retry(self):
        judge = _ScriptedJudge(["hmm", "True"])
        assert judge_answer("Q", "truth", "resp", self.CFG, judge) is True

    def test_transport_errors_retried_then_raised(self):
        judge = _ScriptedJudge([TransportError("down"), TransportError("down")])
        with pytest.raises(TransportError):
            judge_answer("Q", "truth", "resp", self.CFG, judge)

    def test_mixed_true_false_casing_rejected(self):
        judge = _ScriptedJudge(["true", "TRUE"])
        with pytest.raises(JudgeUnparseable):
            judge_answer("Q", "truth", "resp", self.CFG, judge)


def saturated_engine_run(tmp_path, epochs=3, lr=0.05, max_tokens=256):
    """Engine callback: full pipelined run per instance on the mock stack."""
    trainer = TrainerEndpoint(in_process=MockTrainer())
    chat = NeedleAwareChat()
    counter = {"n": 0}

    def engine_run(instance, question):
        counter["n"] += 1
        job = TrainerJob(
            job_id=f"{instance.doc_id}:{counter['n']}",
            base_model="mock-base",
            adapter=AdapterConfig(rank=8, alpha=16.0),
            learning_rate=lr,
            epochs=epochs,
            batch_size=16,
            seed=0,
        )
        pipe_cfg = PipelineConfig(batch_size=16, epochs=epochs, cache_dir=str(tmp_path / "cache"))
        gen_cfg = GenerationConfig(qas_per_sentence=5, prompt_kind="niah", model_name="scripted")
        report = run_lift(
            instance, gen_cfg, SegmenterConfig(), pipe_cfg, job, trainer,
            questions=[question], chat_client=chat, generate_max_tokens=max_tokens,
        )
        return report.answers[0]["text"]

    return engine_run


def untrained_engine_run():
    """Zero-epoch analogue: query a fresh job that never saw a batch."""
    worker = MockTrainer()
    client = TrainerClient(TrainerEndpoint(in_process=worker))
    counter = {"n": 0}

    def engine_run(instance, question):
        counter["n"] += 1
        job = TrainerJob(
            job_id=f"{instance.doc_id}:{counter['n']}",
            base_model="mock-base",
            adapter=AdapterConfig(rank=8, alpha=16.0),
            learning_rate=0.05,
            epochs=1,
            batch_size=16,
            seed=0,
        )
        handle = client.create_job(job)
        return client.generate(handle, question, max_tokens=256, decoding=Decoding())

    return engine_run


class TestMatrix:
    def test_saturated_mock_cell_is_perfect(self, tmp_path, filler_corpus):
        report = run_niah_matrix(
            [1000], [50.0], saturated_engine_run(tmp_path), seed=3, filler_corpus=filler_corpus
        )
        assert report.cell(1000, 50.0).accuracy == 1.0

    def test_untrained_mock_scores_zero(self, filler_corpus):
        report = run_niah_matrix(
            [1000], [50.0], untrained_engine_run(), seed=3, filler_corpus=filler_corpus
        )
        assert report.cell(1000, 50.0).accuracy == 0.0

    def test_grid_shape(self, filler_corpus):
        report = run_niah_matrix(
            [500, 1000], [0.0, 50.0, 100.0], untrained_engine_run(), seed=1,
            filler_corpus=filler_corpus,
        )
        assert len(report.cells) == 6
        assert report.lengths == (500, 1000)
        assert report.depths == (0.0, 50.0, 100.0)

    def test_failing_cell_recorded_not_fatal(self, filler_corpus):
        def broken_run(instance, question):
            raise RuntimeError("trainer exploded")

        report = run_niah_matrix(
            [1000], [0.0, 50.0], broken_run, seed=1, filler_corpus=filler_corpus
        )
        assert all(c.accuracy is None for c in report.cells)
        assert all("trainer exploded" in c.error for c in report.cells)

    def test_csv_and_heatmap(self, filler_corpus):
        report = run_niah_matrix(
            [1000], [0.0, 100.0], untrained_engine_run(), seed=1, filler_corpus=filler_corpus
        )
        csv_text = report.to_csv()
        assert csv_text.splitlines()[0] == "length,depth,accuracy"
        assert len(csv_text.strip().splitlines()) == 1 + 2
        heatmap = report.render_heatmap()
        assert "1000" in heatmap and "depth" in heatmap

    def test_concurrent_cells(self, tmp_path, filler_corpus):
        report = run_niah_matrix(
            [1000], [0.0, 100.0], untrained_engine_run(), seed=1,
            filler_corpus=filler_corpus, cell_parallelism=2,
        )
        assert len(report.cells) == 2
        assert all(c.accuracy == 0.0 for c in report.cells)

    def test_report_round_trips_to_json(self, filler_corpus):
        report = run_niah_matrix(
            [1000], [50.0], untrained_engine_run(), seed=1, filler_corpus=filler_corpus
        )
        assert json.loads(json.dumps(report.to_dict()))["cells"][0]["accuracy"] == 0.0
