"""liftkit: test-time fine-tuning orchestration.

Segment a long input, synthesize QA tasks from it, stream them through an
asynchronous producer-consumer pipeline into a trainer worker, and
evaluate or benchmark the resulting context-free model.
"""

from .benchkit import CostParams, MissingEvent, crossover_analysis, measure_ttft, simulate_schedule
from .cache import CacheConfigMismatch, CacheIncomplete, TaskCache
from .chat import ChatCompletionsClient, EchoChatClient, TransportError
from .evalharness import (
    NEEDLE,
    NIAH_KEYWORDS,
    NIAH_QUESTION,
    FillerTooShort,
    JudgeConfig,
    JudgeUnparseable,
    NiahReport,
    build_niah_case,
    judge_answer,
    run_niah_matrix,
    score_niah_response,
)
from .pipeline import (
    NoTrainingData,
    PipelineConfig,
    RunReport,
    assemble_batches,
    generate_to_cache,
    mix_segments,
    replay_from_cache,
    run_lift,
)
from .segmenter import SegmenterConfig, chunk_raw, estimate_tokens, make_document, split_sentences
from .taskgen import (
    EmptyList,
    GenerationConfig,
    GenerationOutcome,
    MalformedResponse,
    estimate_training_cost,
    generate_for_sentence,
    parse_qa_response,
    render_prompt,
)
from .trainer import (
    Decoding,
    MockModel,
    MockTrainer,
    TrainerClient,
    TrainerEndpoint,
    TrainerServer,
)
from .types import (
    AdapterConfig,
    BatchLossReport,
    CostModel,
    Document,
    MetricEvent,
    NiahCase,
    PipelineMetrics,
    QAPair,
    RawSegment,
    SentenceUnit,
    TaskBatch,
    TrainerJob,
    ValidationError,
)

__version__ = "0.1.0"
