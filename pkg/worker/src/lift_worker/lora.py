"""Low-rank adapters over frozen linear layers.

The B factor starts at zero, so an adapted model's outputs are bit-equal
to the base model's until the first optimizer step.
"""

from __future__ import annotations

import math

import torch
from torch import nn


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float, dropout: float = 0.0):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        in_features = base.in_features
        out_features = base.out_features
        self.lora_a = nn.Parameter(torch.randn(rank, in_features) / math.sqrt(rank))
        self.lora_b = nn.Parameter(torch.zeros(out_features, rank))
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(dropout) if dropout > 0 else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        delta = self.dropout(x) @ self.lora_a.T @ self.lora_b.T
        return self.base(x) + self.scaling * delta


def apply_lora(model: nn.Module, rank: int, alpha: float, dropout: float = 0.0) -> list[nn.Parameter]:
    """Freeze the model and wrap every linear projection with an adapter.

    Covers the attention and MLP projections of each block plus the LM
    head. Returns the trainable adapter parameters.
    """
    for p in model.parameters():
        p.requires_grad_(False)
    for block in model.blocks:
        block.attn_qkv = LoraLinear(block.attn_qkv, rank, alpha, dropout)
        block.attn_out = LoraLinear(block.attn_out, rank, alpha, dropout)
        block.mlp_in = LoraLinear(block.mlp_in, rank, alpha, dropout)
        block.mlp_out = LoraLinear(block.mlp_out, rank, alpha, dropout)
    model.lm_head = LoraLinear(model.lm_head, rank, alpha, dropout)
    return [p for p in model.parameters() if p.requires_grad]
