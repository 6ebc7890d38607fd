"""Engine configuration: one JSON file drives every command.

Environment variables override only secrets (API keys); everything else
lives in the file so a run is reproducible from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urlparse

from .evalharness import JudgeConfig
from .pipeline import PipelineConfig
from .segmenter import SegmenterConfig
from .taskgen import GenerationConfig
from .types import ValidationError, _require


def _check_url(url: str, field_name: str) -> None:
    parsed = urlparse(url)
    _require(
        parsed.scheme in ("http", "https") and bool(parsed.netloc),
        field_name,
        f"{url!r} is not a well-formed http(s) URL",
    )


@dataclass(frozen=True)
class TrainerSettings:
    """Which trainer to drive and the job hyperparameters to send it."""

    kind: str = "mock"  # mock | http
    base_url: str | None = None
    timeout: float = 600.0
    base_model: str = "mock-base"
    rank: int = 128
    alpha: float = 256.0
    learning_rate: float = 1e-4
    generate_max_tokens: int = 64
    decoding: str = "greedy"

    def __post_init__(self) -> None:
        _require(self.kind in ("mock", "http"), "trainer.kind", "must be mock or http")
        if self.kind == "http":
            _require(self.base_url is not None, "trainer.base_url", "required for http trainer")
            _check_url(self.base_url, "trainer.base_url")
        _require(self.rank > 0, "trainer.rank", "must be > 0")
        _require(self.learning_rate > 0, "trainer.learning_rate", "must be > 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "base_url": self.base_url,
            "timeout": self.timeout,
            "base_model": self.base_model,
            "rank": self.rank,
            "alpha": self.alpha,
            "learning_rate": self.learning_rate,
            "generate_max_tokens": self.generate_max_tokens,
            "decoding": self.decoding,
        }


@dataclass(frozen=True)
class BenchSettings:
    """Inputs for the simulate/ttft/crossover benchmark modes."""

    gen_latency_per_sentence: float = 0.1
    producer_parallelism: int = 8
    train_time_per_batch: float = 0.05
    n_sentences: int = 64
    lift_per_token_decode_cost: float = 0.02
    icl_prefill_per_token: float = 0.0005
    icl_prefill_quadratic: float = 0.0
    icl_decode_base: float = 0.02
    icl_decode_per_context_token: float = 0.00002
    input_length: int = 8000
    output_lengths: tuple[int, ...] = (64, 256, 1024, 2048, 4096)

    def to_dict(self) -> dict:
        return {
            "gen_latency_per_sentence": self.gen_latency_per_sentence,
            "producer_parallelism": self.producer_parallelism,
            "train_time_per_batch": self.train_time_per_batch,
            "n_sentences": self.n_sentences,
            "lift_per_token_decode_cost": self.lift_per_token_decode_cost,
            "icl_prefill_per_token": self.icl_prefill_per_token,
            "icl_prefill_quadratic": self.icl_prefill_quadratic,
            "icl_decode_base": self.icl_decode_base,
            "icl_decode_per_context_token": self.icl_decode_per_context_token,
            "input_length": self.input_length,
            "output_lengths": list(self.output_lengths),
        }


@dataclass(frozen=True)
class NiahSettings:
    """Needle-matrix inputs: where the filler text lives, matrix defaults."""

    filler_path: str = ""
    lengths: tuple[int, ...] = (1000,)
    depths: tuple[float, ...] = (0.0, 25.0, 50.0, 75.0, 100.0)
    generate_max_tokens: int = 256
    cell_parallelism: int = 1

    def to_dict(self) -> dict:
        return {
            "filler_path": self.filler_path,
            "lengths": list(self.lengths),
            "depths": list(self.depths),
            "generate_max_tokens": self.generate_max_tokens,
            "cell_parallelism": self.cell_parallelism,
        }


@dataclass(frozen=True)
class EngineConfig:
    """Fully-resolved settings for one engine invocation."""

    generator: GenerationConfig = field(default_factory=GenerationConfig)
    generator_kind: str = "http"  # http | echo
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    trainer: TrainerSettings = field(default_factory=TrainerSettings)
    judge: JudgeConfig | None = None
    bench: BenchSettings = field(default_factory=BenchSettings)
    niah: NiahSettings = field(default_factory=NiahSettings)
    seed: int = 0
    out_dir: str = "liftkit-out"

    def __post_init__(self) -> None:
        _require(
            self.generator_kind in ("http", "echo"),
            "generator.kind",
            "must be http or echo",
        )
        if self.generator_kind == "http" and self.generator.endpoint_url:
            _check_url(self.generator.endpoint_url, "generator.endpoint_url")
        if self.judge is not None and self.judge.endpoint_url:
            _check_url(self.judge.endpoint_url, "judge.endpoint_url")

    def to_dict(self) -> dict:
        return {
            "generator": {**self.generator.to_dict(), "kind": self.generator_kind},
            "segmenter": self.segmenter.to_dict(),
            "pipeline": self.pipeline.to_dict(),
            "trainer": self.trainer.to_dict(),
            "judge": self.judge.to_dict() if self.judge else None,
            "bench": self.bench.to_dict(),
            "niah": self.niah.to_dict(),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }


def load_config(path: str | Path) -> EngineConfig:
    """Parse and validate an engine config file, applying section defaults."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValidationError("config", "top level must be a JSON object")

    gen_section = dict(raw.get("generator", {}))
    generator_kind = gen_section.pop("kind", "http")
    generator = GenerationConfig(**gen_section)
    segmenter = SegmenterConfig(**raw.get("segmenter", {}))
    pipeline = PipelineConfig(**raw.get("pipeline", {}))
    trainer = TrainerSettings(**raw.get("trainer", {}))
    judge = JudgeConfig(**raw["judge"]) if raw.get("judge") else None
    bench_section = dict(raw.get("bench", {}))
    if "output_lengths" in bench_section:
        bench_section["output_lengths"] = tuple(bench_section["output_lengths"])
    bench = BenchSettings(**bench_section)
    niah_section = dict(raw.get("niah", {}))
    for key in ("lengths", "depths"):
        if key in niah_section:
            niah_section[key] = tuple(niah_section[key])
    niah = NiahSettings(**niah_section)

    return EngineConfig(
        generator=generator,
        generator_kind=generator_kind,
        segmenter=segmenter,
        pipeline=pipeline,
        trainer=trainer,
        judge=judge,
        bench=bench,
        niah=niah,
        seed=int(raw.get("seed", 0)),
        out_dir=raw.get("out_dir", "liftkit-out"),
    )
