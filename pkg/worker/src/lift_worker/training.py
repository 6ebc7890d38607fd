"""Sequence rendering, masked loss, optimizer steps, and decoding.

QA items render as ``Question: {q}\nAnswer: {a}`` with the loss restricted
to the answer span (plus end-of-sequence); raw segments take loss over
every token. The reported figure is the summed negative log-likelihood of
the masked-in tokens divided by the item count.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import EncodingError, RequestInvalid
from .model import TinyCausalLM
from .tokenizer import WordTokenizer

QA_WRAPPER = "Question: {question}\nAnswer:"


def render_qa_prompt(question: str) -> str:
    return QA_WRAPPER.replace("{question}", question)


class Encoded:
    """One training sequence: token ids plus which targets carry loss."""

    __slots__ = ("input_ids", "target_ids", "loss_mask")

    def __init__(self, input_ids: list[int], target_ids: list[int], loss_mask: list[bool]):
        self.input_ids = input_ids
        self.target_ids = target_ids
        self.loss_mask = loss_mask


def encode_item(item: dict, tokenizer: WordTokenizer, max_seq_len: int) -> Encoded:
    """Turn one wire-format training item into a masked sequence."""
    kind = item.get("kind")
    if kind == "qa":
        question, answer = item.get("question"), item.get("answer")
        if not isinstance(question, str) or not isinstance(answer, str):
            raise RequestInvalid("qa item needs string question and answer")
        prompt_ids = tokenizer.encode(render_qa_prompt(question))
        answer_ids = tokenizer.encode(answer)
        if not answer_ids:
            raise EncodingError("answer has no tokens")
        seq = [tokenizer.bos_id] + prompt_ids + answer_ids + [tokenizer.eos_id]
        answer_start = 1 + len(prompt_ids)  # index of first answer token in seq
        if len(seq) > max_seq_len + 1:
            drop = len(seq) - (max_seq_len + 1)  # drop oldest prompt tokens
            drop = min(drop, answer_start - 1)
            seq = [tokenizer.bos_id] + seq[1 + drop :]
            answer_start -= drop
        mask = [i + 1 >= answer_start for i in range(len(seq) - 1)]
    elif kind == "raw_segment":
        text = item.get("text")
        if not isinstance(text, str):
            raise RequestInvalid("raw_segment item needs string text")
        text_ids = tokenizer.encode(text)
        if not text_ids:
            raise EncodingError("segment has no tokens")
        seq = [tokenizer.bos_id] + text_ids[: max_seq_len - 1] + [tokenizer.eos_id]
        mask = [True] * (len(seq) - 1)
    else:
        raise RequestInvalid(f"unknown training item kind {kind!r}")
    return Encoded(seq[:-1], seq[1:], mask)


def batch_forward_nll(
    model: TinyCausalLM,
    encoded: list[Encoded],
    pad_id: int,
) -> tuple[torch.Tensor, float]:
    """Forward one batch; returns (mean-token loss for backprop, summed NLL)."""
    width = max(len(e.input_ids) for e in encoded)
    inputs = torch.full((len(encoded), width), pad_id, dtype=torch.long)
    targets = torch.full((len(encoded), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(encoded), width), dtype=torch.bool)
    for row, e in enumerate(encoded):
        n = len(e.input_ids)
        inputs[row, :n] = torch.tensor(e.input_ids)
        targets[row, :n] = torch.tensor(e.target_ids)
        mask[row, :n] = torch.tensor(e.loss_mask)
    logits = model(inputs)
    nll = F.cross_entropy(
        logits.reshape(-1, logits.size(-1)), targets.reshape(-1), reduction="none"
    ).reshape(targets.shape)
    masked = nll[mask]
    return masked.mean(), float(masked.sum().item())


@torch.no_grad()
def generate_text(
    model: TinyCausalLM,
    tokenizer: WordTokenizer,
    prompt: str,
    max_tokens: int,
    decoding: dict,
) -> str:
    """Autoregressive decoding: greedy, or seeded temperature sampling."""
    model.eval()
    ids = [tokenizer.bos_id] + tokenizer.encode(prompt)
    ids = ids[-model.cfg.max_seq_len :]
    kind = decoding.get("kind", "greedy")
    generator = None
    if kind == "sampled":
        generator = torch.Generator().manual_seed(int(decoding.get("seed", 0)))
    generated: list[int] = []
    for _ in range(max_tokens):
        window = torch.tensor([ids[-model.cfg.max_seq_len :]], dtype=torch.long)
        logits = model(window)[0, -1]
        logits[tokenizer.pad_id] = float("-inf")
        if kind == "greedy":
            next_id = int(torch.argmax(logits).item())
        else:
            temperature = float(decoding.get("temperature", 1.0))
            probs = torch.softmax(logits / temperature, dim=-1)
            next_id = int(torch.multinomial(probs, 1, generator=generator).item())
        if next_id == tokenizer.eos_id:
            break
        generated.append(next_id)
        ids.append(next_id)
    return tokenizer.decode(generated)
