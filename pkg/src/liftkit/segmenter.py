"""Deterministic document decomposition.

Splits a document into sentence units (for QA synthesis) and raw segments
(for raw-text fine-tuning), and estimates token counts. Everything here is
a pure function of its inputs so that caches stay stable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .types import Document, RawSegment, SentenceUnit, ValidationError, _require

TOKEN_ESTIMATORS = ("chars_div_4", "whitespace_words", "external")

# Final '.' of these never ends a sentence. Compared case-insensitively.
_ABBREVIATIONS = frozenset(
    a.lower()
    for a in (
        "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.",
        "vs.", "etc.", "e.g.", "i.e.", "cf.", "al.", "Fig.", "No.",
        "U.S.", "U.K.", "Inc.", "Ltd.", "Co.",
    )
)

_TERMINATORS = ".!?"
_OPENERS = "\"'“‘«("


@dataclass(frozen=True)
class SegmenterConfig:
    """Knobs for sentence splitting, raw chunking, and token estimation."""

    context_window_sentences: int = 3
    context_window_char_cap: int = 512
    raw_segment_token_len: int = 512
    token_estimator: str = "chars_div_4"

    def __post_init__(self) -> None:
        _require(self.context_window_sentences > 0, "context_window_sentences", "must be > 0")
        _require(self.context_window_char_cap > 0, "context_window_char_cap", "must be > 0")
        _require(self.raw_segment_token_len > 0, "raw_segment_token_len", "must be > 0")
        _require(
            self.token_estimator in TOKEN_ESTIMATORS,
            "token_estimator",
            f"must be one of {TOKEN_ESTIMATORS}",
        )

    def to_dict(self) -> dict:
        return {
            "context_window_sentences": self.context_window_sentences,
            "context_window_char_cap": self.context_window_char_cap,
            "raw_segment_token_len": self.raw_segment_token_len,
            "token_estimator": self.token_estimator,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmenterConfig":
        return cls(**d)


def estimate_tokens(
    text: str,
    estimator: str = "chars_div_4",
    tokenize: Callable[[str], int] | None = None,
) -> int:
    """Estimate the token count of ``text``.

    ``external`` delegates to a supplied ``tokenize`` callable (typically a
    trainer worker's tokenize endpoint); transport errors propagate.
    """
    if estimator == "chars_div_4":
        return (len(text) + 3) // 4
    if estimator == "whitespace_words":
        return len(text.split())
    if estimator == "external":
        if tokenize is None:
            raise ValidationError("token_estimator", "external estimator needs a tokenize callable")
        return tokenize(text)
    raise ValidationError("token_estimator", f"unknown estimator {estimator!r}")


def _trailing_word(text: str, end: int) -> str:
    """The abbreviation-shaped token ending at ``end`` (inclusive)."""
    start = end
    while start > 0 and (text[start - 1].isalpha() or text[start - 1] == "."):
        start -= 1
    return text[start : end + 1]


def _terminator_boundary(text: str, i: int) -> bool:
    """True if the terminator at index ``i`` ends a sentence.

    Requires following whitespace and then an uppercase letter, digit, or
    opening quote, and the token must not be a guarded abbreviation.
    """
    n = len(text)
    if i + 1 >= n or not text[i + 1].isspace():
        return False
    j = i + 1
    while j < n and text[j].isspace():
        j += 1
    if j >= n:
        return False
    nxt = text[j]
    if not (nxt.isupper() or nxt.isdigit() or nxt in _OPENERS):
        return False
    if text[i] == "." and _trailing_word(text, i).lower() in _ABBREVIATIONS:
        return False
    return True


def _sentence_spans(text: str) -> list[tuple[int, int]]:
    """Half-open character spans that tile ``text`` exactly, one per sentence.

    A boundary sits right after a sentence terminator (the following
    whitespace belongs to the next sentence) or at the start of a
    whitespace run containing a blank line.
    """
    n = len(text)
    boundaries: set[int] = set()
    i = 0
    while i < n:
        ch = text[i]
        if ch in _TERMINATORS and _terminator_boundary(text, i):
            boundaries.add(i + 1)
        elif ch == "\n" and i + 1 < n and text[i + 1] == "\n":
            run_start = i
            while run_start > 0 and text[run_start - 1].isspace():
                run_start -= 1
            if run_start > 0:
                boundaries.add(run_start)
        i += 1

    cuts = sorted(b for b in boundaries if 0 < b < n) + [n]
    spans: list[tuple[int, int]] = []
    prev = 0
    for b in cuts:
        if b > prev:
            spans.append((prev, b))
            prev = b

    # Fold whitespace-only slices into the preceding sentence.
    merged: list[tuple[int, int]] = []
    for span in spans:
        if merged and text[span[0] : span[1]].strip() == "":
            a, _ = merged.pop()
            merged.append((a, span[1]))
        else:
            merged.append(span)
    if not merged:
        merged = [(0, n)]
    return merged


def sentence_texts(text: str) -> list[str]:
    """Sentence slices of raw text, tiling it exactly."""
    return [text[a:b] for a, b in _sentence_spans(text)]


def split_sentences(doc: Document, cfg: SegmenterConfig) -> list[SentenceUnit]:
    """Split a document into sentence units with preceding-context windows.

    Sentence texts tile ``doc.text`` exactly; ``preceding_context`` is the
    concatenation of up to ``context_window_sentences`` prior sentences,
    left-truncated to ``context_window_char_cap`` characters.
    """
    spans = _sentence_spans(doc.text)
    texts = [doc.text[a:b] for a, b in spans]
    units = []
    for idx, sentence in enumerate(texts):
        lo = max(0, idx - cfg.context_window_sentences)
        context = "".join(texts[lo:idx])
        if len(context) > cfg.context_window_char_cap:
            context = context[-cfg.context_window_char_cap :]
        units.append(
            SentenceUnit(
                doc_id=doc.doc_id,
                sentence_index=idx,
                sentence_text=sentence,
                preceding_context=context,
            )
        )
    return units


def _max_prefix_len(text: str, limit: int, est: Callable[[str], int]) -> int:
    """Length of the longest prefix whose estimate stays within ``limit``."""
    lo, hi = 1, len(text)
    best = 1
    while lo <= hi:
        mid = (lo + hi) // 2
        if est(text[:mid]) <= limit:
            best = mid
            lo = mid + 1
        else:
            hi = mid - 1
    return best


def chunk_raw(
    doc: Document,
    cfg: SegmenterConfig,
    tokenize: Callable[[str], int] | None = None,
) -> list[RawSegment]:
    """Tile the document into raw segments of about the target token length.

    Segments never exceed the target estimate; all but the last hold at
    least half of it. Cut points snap to a sentence end within 10% of the
    target when one exists, else to a word boundary, else a hard cut.
    """
    target = cfg.raw_segment_token_len

    def est(s: str) -> int:
        return estimate_tokens(s, cfg.token_estimator, tokenize)

    sentence_ends = [b for _, b in _sentence_spans(doc.text)]
    text = doc.text
    segments: list[str] = []
    start = 0
    while start < len(text):
        rest = text[start:]
        if est(rest) <= target:
            segments.append(rest)
            break
        hard_end = start + _max_prefix_len(rest, target, est)
        end = None
        for e in reversed([e for e in sentence_ends if start < e <= hard_end]):
            if est(text[start:e]) >= 0.9 * target:
                end = e
                break
        if end is None:
            for w in range(hard_end, start, -1):
                if w < len(text) and text[w].isspace() and not text[w - 1].isspace():
                    if est(text[start:w]) >= 0.5 * target:
                        end = w
                        break
                    if est(text[start:w]) < 0.5 * target:
                        break
        if end is None:
            end = hard_end
        segments.append(text[start:end])
        start = end

    return [
        RawSegment(
            doc_id=doc.doc_id,
            segment_index=i,
            text=seg,
            target_token_len=target,
        )
        for i, seg in enumerate(segments)
    ]


def make_document(
    doc_id: str,
    text: str,
    benchmark_kind: str = "generic",
    cfg: SegmenterConfig | None = None,
    tokenize: Callable[[str], int] | None = None,
) -> Document:
    """Build a Document with its token count filled in by the estimator."""
    cfg = cfg or SegmenterConfig()
    count = estimate_tokens(text, cfg.token_estimator, tokenize)
    return Document(
        doc_id=doc_id,
        text=text,
        benchmark_kind=benchmark_kind,
        approx_token_count=count,
    )
