"""A small decoder-only causal language model.

Sized for desk-scale runs (a few million parameters); the worker's job is
protocol fidelity and correct fine-tuning mechanics, not language quality.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .tokenizer import WordTokenizer


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    max_seq_len: int = 256

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "max_seq_len": self.max_seq_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn_qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model, bias=False)
        self.attn_out = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp_in = nn.Linear(cfg.d_model, 4 * cfg.d_model, bias=False)
        self.mlp_out = nn.Linear(4 * cfg.d_model, cfg.d_model, bias=False)
        self.n_heads = cfg.n_heads

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, seq, dim = x.shape
        head_dim = dim // self.n_heads
        q, k, v = self.attn_qkv(self.ln1(x)).chunk(3, dim=-1)
        q = q.view(batch, seq, self.n_heads, head_dim).transpose(1, 2)
        k = k.view(batch, seq, self.n_heads, head_dim).transpose(1, 2)
        v = v.view(batch, seq, self.n_heads, head_dim).transpose(1, 2)
        attn = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        attn = attn.transpose(1, 2).reshape(batch, seq, dim)
        x = x + self.attn_out(attn)
        x = x + self.mlp_out(F.gelu(self.mlp_in(self.ln2(x))))
        return x


class TinyCausalLM(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(seed)
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_seq_len, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        _, seq = token_ids.shape
        positions = torch.arange(seq, device=token_ids.device)
        x = self.tok_emb(token_ids) + self.pos_emb(positions)[None, :, :]
        for block in self.blocks:
            x = block(x)
        return self.lm_head(self.ln_f(x))

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def pretrain_language_model(
    model: TinyCausalLM,
    tokenizer: WordTokenizer,
    corpus: str,
    steps: int = 400,
    lr: float = 3e-3,
    batch_size: int = 8,
    seq_len: int = 64,
    seed: int = 0,
) -> list[float]:
    """Plain next-token pretraining over random corpus windows.

    Gives desk-scale runs a base model that already speaks the corpus and
    basic word statistics, the role a pretrained foundation model plays at
    full scale. Returns the per-step losses.
    """
    ids = tokenizer.encode(corpus)
    if len(ids) < seq_len + 1:
        raise ValueError(f"corpus too short to pretrain: {len(ids)} tokens")
    data = torch.tensor(ids, dtype=torch.long)
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=0.0)
    losses: list[float] = []
    model.train()
    for _ in range(steps):
        starts = torch.randint(0, len(ids) - seq_len - 1, (batch_size,), generator=generator)
        window = torch.stack([data[s : s + seq_len + 1] for s in starts])
        inputs, targets = window[:, :-1], window[:, 1:]
        logits = model(inputs)
        loss = F.cross_entropy(logits.reshape(-1, logits.size(-1)), targets.reshape(-1))
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    model.eval()
    return losses
