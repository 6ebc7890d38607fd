"""The trainer worker: jobs, adapters, and the five protocol operations.

Operates on wire-format dictionaries so the HTTP layer stays a thin shim.
Each job clones its base model, wraps it with rank-``r`` adapters seeded
from the job seed, and takes exactly one optimizer step per delivered
batch.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .errors import (
    ConcurrentTrainRejected,
    DuplicateJobId,
    JobFinalized,
    NoBatchesTrained,
    RequestInvalid,
    UnknownModel,
    UnknownRef,
)
from .lora import apply_lora
from .model import ModelConfig, TinyCausalLM, pretrain_language_model
from .tokenizer import WordTokenizer
from .training import batch_forward_nll, encode_item, generate_text

# Fine-tuning profiles used in the experiments this worker mirrors:
# (learning_rate, epochs) per benchmark, for QA-task runs and raw-chunk runs.
HYPERPARAMETER_PROFILES = {
    ("squad", "lift"): {"learning_rate": 5e-5, "epochs": 5},
    ("niah", "lift"): {"learning_rate": 1e-4, "epochs": 8},
    ("loogle", "lift"): {"learning_rate": 5e-5, "epochs": 5},
    ("squad", "finetune_raw"): {"learning_rate": 5e-5, "epochs": 8},
    ("niah", "finetune_raw"): {"learning_rate": 1e-4, "epochs": 16},
    ("loogle", "finetune_raw"): {"learning_rate": 5e-5, "epochs": 8},
}


def hyperparameter_profile(benchmark: str, method: str = "lift") -> dict:
    try:
        return dict(HYPERPARAMETER_PROFILES[(benchmark, method)])
    except KeyError:
        raise RequestInvalid(f"no hyperparameter profile for ({benchmark!r}, {method!r})")


@dataclass
class BaseModel:
    """A registry entry: frozen weights plus the tokenizer that made them."""

    name: str
    config: ModelConfig
    state_dict: dict
    tokenizer: WordTokenizer
    meta: dict = field(default_factory=dict)

    def instantiate(self) -> TinyCausalLM:
        model = TinyCausalLM(self.config, seed=0)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model


def build_base_model(
    name: str,
    corpus: str,
    d_model: int = 256,
    n_layers: int = 4,
    n_heads: int = 4,
    max_seq_len: int = 256,
    pretrain_steps: int = 0,
    pretrain_lr: float = 3e-3,
    seed: int = 0,
    extra_vocab_text: str = "",
) -> BaseModel:
    """Construct (and optionally pretrain) a base model over a corpus.

    The vocabulary is fixed from the corpus plus ``extra_vocab_text`` (words
    the model must be able to emit even though pretraining never sees
    them); pretraining is plain language modeling so the base knows the
    corpus but no question-answer bindings.
    """
    tokenizer = WordTokenizer.from_corpus(corpus + " " + extra_vocab_text)
    cfg = ModelConfig(
        vocab_size=tokenizer.vocab_size,
        d_model=d_model,
        n_layers=n_layers,
        n_heads=n_heads,
        max_seq_len=max_seq_len,
    )
    model = TinyCausalLM(cfg, seed=seed)
    meta = {"pretrain_steps": pretrain_steps, "seed": seed}
    if pretrain_steps > 0:
        losses = pretrain_language_model(
            model, tokenizer, corpus, steps=pretrain_steps, lr=pretrain_lr, seed=seed
        )
        meta["pretrain_final_loss"] = losses[-1]
    return BaseModel(
        name=name,
        config=cfg,
        state_dict={k: v.clone() for k, v in model.state_dict().items()},
        tokenizer=tokenizer,
        meta=meta,
    )


def save_base_model(base: BaseModel, path: str | Path) -> None:
    torch.save(
        {
            "name": base.name,
            "config": base.config.to_dict(),
            "state_dict": base.state_dict,
            "tokenizer": base.tokenizer.to_dict(),
            "meta": base.meta,
        },
        path,
    )


def load_base_model(path: str | Path) -> BaseModel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    return BaseModel(
        name=blob["name"],
        config=ModelConfig.from_dict(blob["config"]),
        state_dict=blob["state_dict"],
        tokenizer=WordTokenizer.from_dict(blob["tokenizer"]),
        meta=blob.get("meta", {}),
    )


@dataclass(frozen=True)
class WorkerConfig:
    """Registry and device settings for one worker process."""

    models: dict
    device: str = "cpu"
    max_concurrent_jobs: int = 4
    default_rank: int = 128
    default_alpha: float | None = None  # None -> 2 * rank
    default_dropout: float = 0.0

    def __post_init__(self) -> None:
        if not self.models:
            raise RequestInvalid("worker registry must hold at least one model")


def _require_field(payload: dict, name: str, kind) -> object:
    value = payload.get(name)
    if not isinstance(value, kind):
        raise RequestInvalid(f"field {name!r} missing or not {kind.__name__}")
    return value


class _Job:
    def __init__(self, payload: dict, model: TinyCausalLM, tokenizer: WordTokenizer,
                 optimizer: torch.optim.Optimizer, metadata: dict):
        self.payload = payload
        self.model = model
        self.tokenizer = tokenizer
        self.optimizer = optimizer
        self.metadata = metadata
        self.batches_trained = 0
        self.adapter_ref: str | None = None
        self.train_lock = threading.Lock()


def apply_hyperparameters(job_payload: dict, params: list) -> tuple[torch.optim.Optimizer, dict]:
    """Build the optimizer and (constant) schedule for a job.

    Learning rate and epoch count come through exactly as requested; the
    optimizer family and its untuned settings are recorded in the returned
    schedule metadata rather than silently assumed.
    """
    lr = job_payload["learning_rate"]
    optimizer = torch.optim.AdamW(params, lr=lr, betas=(0.9, 0.999), weight_decay=0.0)
    schedule = {
        "optimizer": "AdamW",
        "learning_rate": lr,
        "epochs": job_payload["epochs"],
        "betas": [0.9, 0.999],
        "weight_decay": 0.0,
        "warmup_steps": 0,
        "schedule": "constant",
        "steps_per_batch": 1,
    }
    return optimizer, schedule


class LoraWorker:
    """Implements the trainer protocol over small causal LMs with adapters."""

    def __init__(self, config: WorkerConfig):
        self.config = config
        self._jobs: dict[str, _Job] = {}
        self._refs: dict[str, str] = {}
        self._lock = threading.Lock()
        self._train_slots = threading.Semaphore(config.max_concurrent_jobs)

    # -- registry -----------------------------------------------------------

    def _base(self, name: str) -> BaseModel:
        base = self.config.models.get(name)
        if base is None:
            raise UnknownModel(f"base model {name!r} not registered")
        return base

    def _job(self, handle: str) -> _Job:
        with self._lock:
            job = self._jobs.get(handle)
        if job is None:
            raise UnknownRef(f"unknown job {handle!r}")
        return job

    # -- protocol operations -------------------------------------------------

    def create_job(self, payload: dict) -> str:
        job_id = _require_field(payload, "job_id", str)
        base_name = _require_field(payload, "base_model", str)
        adapter = _require_field(payload, "adapter", dict)
        learning_rate = payload.get("learning_rate")
        if not isinstance(learning_rate, (int, float)) or learning_rate <= 0:
            raise RequestInvalid("field 'learning_rate' must be a positive number")
        epochs = payload.get("epochs")
        if not isinstance(epochs, int) or epochs < 1:
            raise RequestInvalid("field 'epochs' must be an integer >= 1")
        if payload.get("loss_masking", "answer_only") != "answer_only":
            raise RequestInvalid("only answer_only loss masking is supported")
        if adapter.get("init_scheme", "b_zero") != "b_zero":
            raise RequestInvalid("only b_zero adapter initialization is supported")
        rank = adapter.get("rank", self.config.default_rank)
        if not isinstance(rank, int) or rank < 1:
            raise RequestInvalid("adapter rank must be an integer >= 1")
        alpha = adapter.get("alpha")
        if alpha is None:
            alpha = self.config.default_alpha if self.config.default_alpha is not None else 2.0 * rank

        base = self._base(base_name)
        seed = payload.get("seed", 0)
        model = base.instantiate()
        torch.manual_seed(int(seed))
        params = apply_lora(model, rank=rank, alpha=float(alpha), dropout=self.config.default_dropout)
        optimizer, schedule = apply_hyperparameters(payload, params)
        metadata = {
            "base_model": base_name,
            "adapter": {
                "rank": rank,
                "alpha": float(alpha),
                "dropout": self.config.default_dropout,
                "init_scheme": "b_zero",
                "a_init": "normal(0, 1/sqrt(rank))",
            },
            "qa_wrapper": "Question: {question}\\nAnswer: {answer}",
            "seed": seed,
            **schedule,
        }
        with self._lock:
            if job_id in self._jobs:
                raise DuplicateJobId(f"job {job_id!r} already exists")
            self._jobs[job_id] = _Job(payload, model, base.tokenizer, optimizer, metadata)
        return job_id

    def train_batch(self, handle: str, batch: dict) -> dict:
        job = self._job(handle)
        if job.adapter_ref is not None:
            raise JobFinalized(f"job {handle!r} is finalized")
        epoch = batch.get("epoch")
        batch_index = batch.get("batch_index")
        items = batch.get("items")
        if not isinstance(epoch, int) or epoch < 1 or not isinstance(batch_index, int):
            raise RequestInvalid("batch needs integer epoch >= 1 and batch_index")
        if not isinstance(items, list) or not items:
            raise RequestInvalid("batch items must be a non-empty list")
        if not job.train_lock.acquire(blocking=False):
            raise ConcurrentTrainRejected(f"job {handle!r} already has a train call in flight")
        try:
            with self._train_slots:
                encoded = [
                    encode_item(item, job.tokenizer, job.model.cfg.max_seq_len) for item in items
                ]
                job.model.train()
                mean_token_loss, total_nll = batch_forward_nll(
                    job.model, encoded, job.tokenizer.pad_id
                )
                job.optimizer.zero_grad()
                mean_token_loss.backward()
                job.optimizer.step()
                job.model.eval()
                job.batches_trained += 1
                return {
                    "epoch": epoch,
                    "batch_index": batch_index,
                    "mean_loss": total_nll / len(items),
                    "item_count": len(items),
                }
        finally:
            job.train_lock.release()

    def finalize(self, handle: str) -> str:
        job = self._job(handle)
        if job.adapter_ref is not None:
            return job.adapter_ref
        if job.batches_trained == 0:
            raise NoBatchesTrained(f"job {handle!r} trained no batches")
        ref = f"adapter:{handle}"
        job.adapter_ref = ref
        with self._lock:
            self._refs[ref] = handle
        return ref

    def generate(self, handle_or_ref: str, prompt: str, max_tokens: int = 64,
                 decoding: dict | None = None) -> str:
        if not isinstance(prompt, str):
            raise RequestInvalid("prompt must be a string")
        with self._lock:
            handle = self._refs.get(handle_or_ref, handle_or_ref)
        job = self._job(handle)
        return generate_text(
            job.model, job.tokenizer, prompt, int(max_tokens), decoding or {"kind": "greedy"}
        )

    def tokenize(self, text: str) -> int:
        if not isinstance(text, str):
            raise RequestInvalid("text must be a string")
        any_base = next(iter(self.config.models.values()))
        return any_base.tokenizer.count(text)

    def job_metadata(self, handle: str) -> dict:
        return dict(self._job(handle).metadata)
