"""Operator command line: run, gen, eval-niah, bench.

Exit codes: 0 success, 2 runtime abort (with a machine-readable error
record on stderr), 64 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import uuid
from pathlib import Path

from .benchkit import CostParams, crossover_analysis, simulate_schedule
from .cache import CacheConfigMismatch, CacheIncomplete
from .chat import ChatCompletionsClient, EchoChatClient, TransportError
from .config import EngineConfig, load_config
from .evalharness import FillerTooShort, JudgeUnparseable, run_niah_matrix
from .pipeline import NoTrainingData, generate_to_cache, run_lift
from .segmenter import make_document
from .trainer import Decoding, MockTrainer, TrainerEndpoint, TrainerError
from .types import AdapterConfig, Document, TrainerJob, ValidationError

EXIT_OK = 0
EXIT_RUNTIME = 2
EXIT_USAGE = 64

_ABORT_TYPES = (
    TrainerError,
    NoTrainingData,
    CacheIncomplete,
    CacheConfigMismatch,
    ValidationError,
    FillerTooShort,
    JudgeUnparseable,
    TransportError,
    FileNotFoundError,
    OSError,
    json.JSONDecodeError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _error_record(exc: Exception) -> str:
    kind = getattr(exc, "kind", type(exc).__name__)
    return json.dumps({"error": {"kind": kind, "message": str(exc)}})


def _chat_client(cfg: EngineConfig):
    if cfg.generator_kind == "echo":
        return EchoChatClient()
    return ChatCompletionsClient(cfg.generator.endpoint_url, cfg.generator.model_name)


def _trainer_endpoint(cfg: EngineConfig) -> TrainerEndpoint:
    if cfg.trainer.kind == "mock":
        return TrainerEndpoint(in_process=MockTrainer())
    return TrainerEndpoint(base_url=cfg.trainer.base_url, timeout=cfg.trainer.timeout)


def _trainer_job(cfg: EngineConfig, doc_id: str, seed: int) -> TrainerJob:
    return TrainerJob(
        job_id=f"{doc_id}:{uuid.uuid4().hex[:12]}",
        base_model=cfg.trainer.base_model,
        adapter=AdapterConfig(rank=cfg.trainer.rank, alpha=cfg.trainer.alpha),
        learning_rate=cfg.trainer.learning_rate,
        epochs=cfg.pipeline.epochs,
        batch_size=cfg.pipeline.batch_size,
        seed=seed,
    )


def _decoding(cfg: EngineConfig, seed: int) -> Decoding:
    if cfg.trainer.decoding == "sampled":
        return Decoding(kind="sampled", temperature=1.0, seed=seed)
    return Decoding()


def _load_doc(cfg: EngineConfig, doc_path: str) -> Document:
    text = Path(doc_path).read_text(encoding="utf-8")
    return make_document(
        doc_id=Path(doc_path).stem,
        text=text,
        benchmark_kind=cfg.generator.prompt_kind,
        cfg=cfg.segmenter,
    )


def _out_dir(cfg: EngineConfig, args) -> Path:
    out = Path(args.out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> tuple[EngineConfig, int]:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    return cfg, seed


def cmd_run(args) -> int:
    cfg, seed = _resolve(args)
    out = _out_dir(cfg, args)
    doc = _load_doc(cfg, args.doc)
    report = run_lift(
        doc,
        cfg.generator,
        cfg.segmenter,
        cfg.pipeline,
        _trainer_job(cfg, doc.doc_id, seed),
        _trainer_endpoint(cfg),
        questions=args.question or [],
        chat_client=None if cfg.pipeline.mode == "finetune_raw" else _chat_client(cfg),
        seed=seed,
        generate_max_tokens=cfg.trainer.generate_max_tokens,
        decoding=_decoding(cfg, seed),
    )
    report_path = out / "run_report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    for answer in report.answers:
        print(f"Q: {answer['question']}")
        print(f"A: {answer['text']}")
    if report.ttft is not None:
        print(f"TTFT: {report.ttft:.3f}s")
    print(f"report: {report_path}")
    return EXIT_OK


def cmd_gen(args) -> int:
    cfg, seed = _resolve(args)
    del seed
    out = _out_dir(cfg, args)
    doc = _load_doc(cfg, args.doc)
    summary = generate_to_cache(
        doc, cfg.generator, cfg.segmenter, cfg.pipeline, chat_client=_chat_client(cfg)
    )
    for idx in summary["skipped"]:
        print(f"skipped sentence {idx}", file=sys.stderr)
    summary["config"] = cfg.to_dict()
    (out / "gen_report.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(f"cached {summary['pairs']} pairs -> {summary['cache_path']}")
    return EXIT_OK


def _parse_grid(text: str | None, fallback, caster, name: str):
    if text is None:
        return list(fallback)
    try:
        values = [caster(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise _UsageError(f"--{name} must be a comma-separated list of numbers")
    if not values:
        raise _UsageError(f"--{name} must be non-empty")
    return values


class _UsageError(Exception):
    pass


def cmd_eval_niah(args) -> int:
    cfg, seed = _resolve(args)
    out = _out_dir(cfg, args)
    lengths = _parse_grid(args.lengths, cfg.niah.lengths, int, "lengths")
    depths = _parse_grid(args.depths, cfg.niah.depths, float, "depths")
    for depth in depths:
        if not 0 <= depth <= 100:
            raise _UsageError(f"depth {depth:g} outside [0, 100]")
    for length in lengths:
        if length < 1:
            raise _UsageError(f"length {length} must be >= 1")

    filler = Path(cfg.niah.filler_path).read_text(encoding="utf-8")
    chat_client = _chat_client(cfg)
    trainer = _trainer_endpoint(cfg)
    gen_cfg = dataclasses.replace(cfg.generator, prompt_kind="niah")

    def engine_run(instance: Document, question: str) -> str:
        report = run_lift(
            instance,
            gen_cfg,
            cfg.segmenter,
            cfg.pipeline,
            _trainer_job(cfg, instance.doc_id, seed),
            trainer,
            questions=[question],
            chat_client=chat_client,
            seed=seed,
            generate_max_tokens=cfg.niah.generate_max_tokens,
            decoding=_decoding(cfg, seed),
        )
        return report.answers[0]["text"]

    report = run_niah_matrix(
        lengths,
        depths,
        engine_run,
        seed,
        filler_corpus=filler,
        seg_cfg=cfg.segmenter,
        cell_parallelism=cfg.niah.cell_parallelism,
    )
    (out / "niah_report.json").write_text(
        json.dumps({"config": cfg.to_dict(), **report.to_dict()}, indent=2), encoding="utf-8"
    )
    (out / "niah_heatmap.txt").write_text(report.render_heatmap(), encoding="utf-8")
    (out / "niah_results.csv").write_text(report.to_csv(), encoding="utf-8")
    print(report.render_heatmap())
    failed = [c for c in report.cells if c.accuracy is None]
    for cell in failed:
        print(f"cell ({cell.length_l}, {cell.depth_d:g}) failed: {cell.error}", file=sys.stderr)
    return EXIT_OK if len(failed) < len(report.cells) else EXIT_RUNTIME


def _bench_params(cfg: EngineConfig) -> CostParams:
    b = cfg.bench
    return CostParams(
        gen_latency_per_sentence=b.gen_latency_per_sentence,
        producer_parallelism=b.producer_parallelism,
        train_time_per_batch=b.train_time_per_batch,
        icl_prefill_cost=lambda L: b.icl_prefill_per_token * L + b.icl_prefill_quadratic * L * L,
        icl_per_token_decode_cost=lambda L: b.icl_decode_base + b.icl_decode_per_context_token * L,
        lift_per_token_decode_cost=b.lift_per_token_decode_cost,
    )


def _write_bench_json(out: Path, mode: str, cfg: EngineConfig, payload: dict) -> None:
    record = {"mode": mode, "config": cfg.to_dict(), **payload}
    (out / f"bench_{mode}.json").write_text(json.dumps(record, indent=2), encoding="utf-8")


def cmd_bench(args) -> int:
    cfg, seed = _resolve(args)
    out = _out_dir(cfg, args)
    params = _bench_params(cfg)
    b = cfg.bench

    if args.mode == "simulate":
        pipelined = simulate_schedule(
            b.n_sentences, params, True, cfg.pipeline.epochs, cfg.pipeline.batch_size,
            cfg.generator.qas_per_sentence,
        )
        serial = simulate_schedule(
            b.n_sentences, params, False, cfg.pipeline.epochs, cfg.pipeline.batch_size,
            cfg.generator.qas_per_sentence,
        )
        csv_lines = [
            "schedule,completion_s,epoch1_done_s,gen_span_s,ttft_s,n_batches_per_epoch",
        ]
        for name, tl in (("pipelined", pipelined), ("serial", serial)):
            csv_lines.append(
                f"{name},{tl.completion_us / 1e6:.6f},{tl.epoch1_done_us / 1e6:.6f},"
                f"{tl.gen_span_us / 1e6:.6f},{tl.first_answer_token_us / 1e6:.6f},"
                f"{tl.n_batches_per_epoch}"
            )
        (out / "bench_simulate.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
        speedup = serial.completion_us / max(pipelined.completion_us, 1)
        summary = (
            f"pipelined completion: {pipelined.completion_us / 1e6:.3f}s\n"
            f"serial completion:    {serial.completion_us / 1e6:.3f}s\n"
            f"speedup:              {speedup:.3f}x\n"
        )
        (out / "bench_simulate.txt").write_text(summary, encoding="utf-8")
        _write_bench_json(
            out,
            "simulate",
            cfg,
            {
                "pipelined_completion_s": pipelined.completion_us / 1e6,
                "serial_completion_s": serial.completion_us / 1e6,
                "speedup": speedup,
            },
        )
        print(summary, end="")
        return EXIT_OK

    if args.mode == "crossover":
        sim = simulate_schedule(
            b.n_sentences, params, True, cfg.pipeline.epochs, cfg.pipeline.batch_size,
            cfg.generator.qas_per_sentence,
        )
        ttft_lift = sim.first_answer_token_us / 1e6
        output_lengths = sorted(set(b.output_lengths))
        result = crossover_analysis(params, ttft_lift, output_lengths, b.input_length)
        if result.crossover_output_len is not None and result.crossover_output_len not in output_lengths:
            result = crossover_analysis(
                params,
                ttft_lift,
                sorted(set(output_lengths) | {result.crossover_output_len}),
                b.input_length,
            )
        (out / "bench_crossover.csv").write_text(result.to_csv(), encoding="utf-8")
        if result.crossover_output_len is None:
            summary = "no crossover: the context-free path never undercuts ICL\n"
        else:
            summary = (
                f"crossover at output length {result.crossover_output_len} tokens "
                f"(ttft_lift={ttft_lift:.3f}s)\n"
            )
        (out / "bench_crossover.txt").write_text(summary, encoding="utf-8")
        _write_bench_json(
            out,
            "crossover",
            cfg,
            {
                "ttft_lift_s": ttft_lift,
                "crossover_output_len": result.crossover_output_len,
                "rows": [row.to_dict() for row in result.rows],
            },
        )
        print(summary, end="")
        return EXIT_OK

    # ttft mode: drive a real run on a synthetic document against the
    # configured stack and report the measured TTFT.
    sentences = [
        f"Benchmark sentence number {i} describes step {i} of the procedure." for i in range(b.n_sentences)
    ]
    doc = make_document("bench-ttft", " ".join(sentences), cfg.generator.prompt_kind, cfg.segmenter)
    report = run_lift(
        doc,
        cfg.generator,
        cfg.segmenter,
        cfg.pipeline,
        _trainer_job(cfg, doc.doc_id, seed),
        _trainer_endpoint(cfg),
        questions=["What does the text describe?"],
        chat_client=_chat_client(cfg),
        seed=seed,
        generate_max_tokens=cfg.trainer.generate_max_tokens,
        decoding=_decoding(cfg, seed),
    )
    summary = f"measured TTFT: {report.ttft:.3f}s over {b.n_sentences} sentences\n"
    (out / "bench_ttft.txt").write_text(summary, encoding="utf-8")
    _write_bench_json(out, "ttft", cfg, {"ttft_s": report.ttft})
    print(summary, end="")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="liftkit", description="Test-time fine-tuning engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="engine config JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default=None)

    p_run = sub.add_parser("run", help="fine-tune on a document and answer questions")
    common(p_run)
    p_run.add_argument("--doc", required=True)
    p_run.add_argument("--question", action="append", default=[])
    p_run.set_defaults(fn=cmd_run)

    p_gen = sub.add_parser("gen", help="generate and cache tasks only")
    common(p_gen)
    p_gen.add_argument("--doc", required=True)
    p_gen.set_defaults(fn=cmd_gen)

    p_eval = sub.add_parser("eval-niah", help="run the needle matrix")
    common(p_eval)
    p_eval.add_argument("--lengths", default=None)
    p_eval.add_argument("--depths", default=None)
    p_eval.set_defaults(fn=cmd_eval_niah)

    p_bench = sub.add_parser("bench", help="latency and cost benchmarking")
    common(p_bench)
    p_bench.add_argument("--mode", required=True, choices=("ttft", "crossover", "simulate"))
    p_bench.set_defaults(fn=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _ABORT_TYPES as exc:
        print(_error_record(exc), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
