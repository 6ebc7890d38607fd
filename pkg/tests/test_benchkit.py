"""Schedule simulation, TTFT measurement, and cost crossover."""

import math
import random

import pytest

from liftkit.benchkit import (
    CostParams,
    MissingEvent,
    crossover_analysis,
    measure_ttft,
    simulate_schedule,
)
from liftkit.types import MetricEvent, PipelineMetrics


def params(g=0.1, p=8, t=0.05, lift_decode=0.0, prefill=None, icl_decode=None):
    return CostParams(
        gen_latency_per_sentence=g,
        producer_parallelism=p,
        train_time_per_batch=t,
        icl_prefill_cost=prefill,
        icl_per_token_decode_cost=icl_decode,
        lift_per_token_decode_cost=lift_decode,
    )


class TestMeasureTtft:
    def test_definition(self):
        metrics = PipelineMetrics(
            events=(
                MetricEvent("input_submitted", 0.0),
                MetricEvent("first_answer_token", 7.2),
            )
        )
        assert measure_ttft(lambda: metrics) == pytest.approx(7.2)

    def test_missing_event(self):
        metrics = PipelineMetrics(events=(MetricEvent("input_submitted", 0.0),))
        with pytest.raises(MissingEvent):
            measure_ttft(lambda: metrics)

    def test_identical_simulations_equal_ttft(self):
        run = lambda: simulate_schedule(64, params(lift_decode=0.01), True, 1, 16, 5)
        assert measure_ttft(run) == measure_ttft(run)


class TestSimulator:
    def test_example_pipelined_beats_serial(self):
        p = params(g=0.1, p=8, t=0.05)
        pipelined = simulate_schedule(64, p, True, 1, 16, 5)
        serial = simulate_schedule(64, p, False, 1, 16, 5)
        assert pipelined.completion_us < serial.completion_us

    def test_p1_t0_equals_generation_span(self):
        p = params(g=0.2, p=1, t=0.0)
        pipelined = simulate_schedule(10, p, True, 1, 4, 3)
        serial = simulate_schedule(10, p, False, 1, 4, 3)
        gen_span = 10 * round(0.2 * 1e6)
        assert pipelined.completion_us == serial.completion_us == gen_span

    def test_g0_equals_training_span(self):
        p = params(g=0.0, p=4, t=0.03)
        pipelined = simulate_schedule(10, p, True, 1, 4, 2)
        serial = simulate_schedule(10, p, False, 1, 4, 2)
        n_batches = math.ceil(20 / 4)
        assert pipelined.completion_us == serial.completion_us == n_batches * 30_000

    def test_extra_epochs_add_pure_training_time(self):
        p = params(g=0.1, p=4, t=0.05)
        one = simulate_schedule(16, p, True, 1, 8, 4)
        three = simulate_schedule(16, p, True, 3, 8, 4)
        per_epoch = one.n_batches_per_epoch * 50_000
        assert three.completion_us == one.completion_us + 2 * per_epoch

    def test_timeline_events_are_ordered(self):
        timeline = simulate_schedule(12, params(), True, 2, 8, 3)
        metrics = timeline.to_metrics()
        times = [e.wall_clock_time for e in metrics.events]
        assert times == sorted(times)


class TestDominanceSweep:
    def test_sweep(self):
        # >= 100 random configurations. Unconstrained draws check the weak
        # dominance bound; draws with at least two generation waves and a
        # first batch that fills during generation check strictness.
        rng = random.Random(2024)
        strict_checked = 0
        for trial in range(140):
            p = rng.randint(1, 8)
            waves = rng.randint(1, 10)
            n = p * waves - rng.randint(0, p - 1)
            g = rng.choice([0.0, 0.01, 0.05, 0.2, 0.5])
            t = rng.choice([0.0, 0.01, 0.05, 0.2])
            m = rng.randint(1, 10)
            batch = rng.randint(1, 2 * m * p)
            epochs = rng.randint(1, 3)
            cost = params(g=g, p=p, t=t)
            pipe = simulate_schedule(n, cost, True, epochs, batch, m)
            serial = simulate_schedule(n, cost, False, epochs, batch, m)
            assert pipe.completion_us <= serial.completion_us

            n_batches = math.ceil(n * m / batch)
            lower = max(math.ceil(n / p) * round(g * 1e6), n_batches * round(t * 1e6))
            assert pipe.epoch1_done_us >= lower - 1

            nondegenerate = (
                p >= 2
                and g > 0
                and t > 0
                and n > p  # at least two generation waves
                and batch <= m * p  # first batch fills during wave one
                and n * m > batch  # more than one batch exists
            )
            if nondegenerate:
                strict_checked += 1
                assert pipe.completion_us < serial.completion_us
        assert strict_checked >= 25

    def test_single_wave_equality_edge(self):
        # Everything arrives at once: overlap is impossible, equality holds.
        cost = params(g=0.1, p=4, t=0.05)
        pipe = simulate_schedule(4, cost, True, 1, 8, 2)
        serial = simulate_schedule(4, cost, False, 1, 8, 2)
        assert pipe.completion_us == serial.completion_us


class TestCrossover:
    def test_analytic_crossover_point(self):
        # lift decodes cheaper but pays TTFT up front: unique finite crossover.
        cost = params(
            lift_decode=0.01,
            prefill=lambda L: 0.001 * L,
            icl_decode=lambda L: 0.02 + 0.0,
        )
        ttft = 12.0035
        L = 8000
        result = crossover_analysis(cost, ttft, [1, 10, 100, 1000], L)
        prefill = 0.001 * L
        expected = math.ceil((ttft - prefill) / (0.02 - 0.01))
        assert result.crossover_output_len == expected
        for row in result.rows:
            assert row.lift_total == pytest.approx(ttft + row.output_len * 0.01)
            assert row.icl_total == pytest.approx(prefill + row.output_len * 0.02)

    def test_crossover_is_strict_at_exact_tie(self):
        # Where the totals tie exactly, the crossover is the next token.
        cost = params(lift_decode=0.01, prefill=lambda L: 8.0, icl_decode=lambda L: 0.02)
        result = crossover_analysis(cost, 12.0, [400], 8000)
        assert result.rows[0].lift_total == result.rows[0].icl_total
        assert result.crossover_output_len == 401

    def test_equal_slopes_no_crossover_unless_cheaper_upfront(self):
        cost = params(lift_decode=0.02, prefill=lambda L: 1.0, icl_decode=lambda L: 0.02)
        assert crossover_analysis(cost, 5.0, [10], 100).crossover_output_len is None
        assert crossover_analysis(cost, 0.5, [10], 100).crossover_output_len == 1

    def test_table_matches_hand_computation(self):
        # Spreadsheet-style recomputation for mock-stack-like parameters.
        cost = params(
            lift_decode=0.005,
            prefill=lambda L: 2e-4 * L + 1e-8 * L * L,
            icl_decode=lambda L: 0.004 + 2e-6 * L,
        )
        L = 16000
        ttft = 9.5
        lengths = [64, 512, 1024, 4096]
        result = crossover_analysis(cost, ttft, lengths, L)
        prefill = 2e-4 * 16000 + 1e-8 * 16000 * 16000
        per_tok = 0.004 + 2e-6 * 16000
        for row, k in zip(result.rows, lengths):
            assert row.lift_total == pytest.approx(9.5 + k * 0.005, rel=1e-12)
            assert row.icl_total == pytest.approx(prefill + k * per_tok, rel=1e-12)
        expected = math.floor((ttft - prefill) / (per_tok - 0.005)) + 1
        assert result.crossover_output_len == expected

    def test_csv_render(self):
        cost = params(lift_decode=0.01, prefill=lambda L: 1.0, icl_decode=lambda L: 0.02)
        result = crossover_analysis(cost, 2.0, [10, 20], 100)
        lines = result.to_csv().strip().splitlines()
        assert lines[0] == "output_len,lift_total_s,icl_total_s"
        assert len(lines) == 3
