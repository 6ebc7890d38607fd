"""lift_worker: adapter fine-tuning of small causal LMs behind the trainer protocol."""

from .model import ModelConfig, TinyCausalLM, pretrain_language_model
from .service import WorkerServer, serve
from .tokenizer import WordTokenizer
from .worker import (
    BaseModel,
    LoraWorker,
    WorkerConfig,
    apply_hyperparameters,
    build_base_model,
    hyperparameter_profile,
    load_base_model,
    save_base_model,
)

__version__ = "0.1.0"
