"""Whitespace word tokenizer with a fixed vocabulary.

Word-level keeps the desk-scale models tiny and makes generated text
directly readable; out-of-vocabulary words map to <unk>.
"""

from __future__ import annotations

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)


class WordTokenizer:
    def __init__(self, words: list[str]):
        seen = dict.fromkeys(SPECIALS)
        for word in words:
            seen.setdefault(word, None)
        self.itos: list[str] = list(seen)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def from_corpus(cls, corpus: str) -> "WordTokenizer":
        return cls(corpus.split())

    @property
    def vocab_size(self) -> int:
        return len(self.itos)

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def bos_id(self) -> int:
        return self.stoi[BOS]

    @property
    def eos_id(self) -> int:
        return self.stoi[EOS]

    def encode(self, text: str) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(w, unk) for w in text.split()]

    def decode(self, ids: list[int]) -> str:
        words = [self.itos[i] for i in ids if self.itos[i] not in SPECIALS]
        return " ".join(words)

    def count(self, text: str) -> int:
        return len(text.split())

    def to_dict(self) -> dict:
        return {"itos": self.itos}

    @classmethod
    def from_dict(cls, d: dict) -> "WordTokenizer":
        tok = cls([])
        tok.itos = list(d["itos"])
        tok.stoi = {w: i for i, w in enumerate(tok.itos)}
        return tok
