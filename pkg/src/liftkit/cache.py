"""Append-only per-document task cache.

One JSONL file per document: one record per QA pair, then a final marker
record once every sentence has reached a terminal outcome. Appends are
flushed and fsynced so a killed run loses at most the record being
written; loading tolerates a trailing partial line.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .types import QAPair, canonical_json


class CacheIncomplete(RuntimeError):
    """The document's cache has no completeness marker."""


class CacheConfigMismatch(RuntimeError):
    """The cache was produced under a different generation configuration."""


class CacheCorrupt(RuntimeError):
    """A non-final record could not be parsed, or a key repeats."""


@dataclass
class CacheSnapshot:
    """Parsed view of one document's cache file."""

    pairs: dict[tuple[str, int, int], QAPair] = field(default_factory=dict)
    marker: dict | None = None

    @property
    def complete(self) -> bool:
        return self.marker is not None

    def sentences_with_pairs(self) -> set[int]:
        return {key[1] for key in self.pairs}

    def canonical_pairs(self) -> list[QAPair]:
        return [self.pairs[k] for k in sorted(self.pairs, key=lambda k: (k[1], k[2]))]


class TaskCache:
    """Store and recover QA pairs for documents under one cache directory."""

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def path_for(self, doc_id: str) -> Path:
        safe = re.sub(r"[^A-Za-z0-9._-]", "_", doc_id)[:80]
        suffix = hashlib.sha256(doc_id.encode("utf-8")).hexdigest()[:8]
        return self.cache_dir / f"{safe}-{suffix}.jsonl"

    def load(self, doc_id: str) -> CacheSnapshot:
        snapshot = CacheSnapshot()
        path = self.path_for(doc_id)
        if not path.exists():
            return snapshot
        lines = path.read_text(encoding="utf-8").split("\n")
        for i, line in enumerate(lines):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                if i >= len(lines) - 2:  # torn final write from a killed run
                    continue
                raise CacheCorrupt(f"{path}: unparseable record on line {i + 1}")
            if record.get("complete") is True:
                snapshot.marker = record
                continue
            pair = QAPair.from_dict(record)
            if pair.key in snapshot.pairs:
                raise CacheCorrupt(f"{path}: duplicate key {pair.key}")
            snapshot.pairs[pair.key] = pair
        return snapshot

    def append_pairs(self, pairs: list[QAPair]) -> None:
        if not pairs:
            return
        path = self.path_for(pairs[0].doc_id)
        payload = "".join(canonical_json(p.to_dict()) + "\n" for p in pairs)
        with self._lock:
            with open(path, "a", encoding="utf-8") as f:
                f.write(payload)
                f.flush()
                os.fsync(f.fileno())

    def write_marker(
        self,
        doc_id: str,
        n_sentences: int,
        skipped: list[int],
        qas_per_sentence: int,
        prompt_kind: str,
        generator_model: str,
    ) -> None:
        record = {
            "complete": True,
            "n_sentences": n_sentences,
            "skipped": sorted(skipped),
            "qas_per_sentence": qas_per_sentence,
            "prompt_kind": prompt_kind,
            "generator_model": generator_model,
        }
        path = self.path_for(doc_id)
        with self._lock:
            with open(path, "a", encoding="utf-8") as f:
                f.write(canonical_json(record) + "\n")
                f.flush()
                os.fsync(f.fileno())

    @staticmethod
    def check_compatible(marker: dict, n_sentences: int, qas_per_sentence: int,
                         prompt_kind: str, generator_model: str) -> None:
        """Reject replaying a cache built under a different generation key."""
        expected = {
            "n_sentences": n_sentences,
            "qas_per_sentence": qas_per_sentence,
            "prompt_kind": prompt_kind,
            "generator_model": generator_model,
        }
        for key, want in expected.items():
            have = marker.get(key)
            if have is not None and have != want:
                raise CacheConfigMismatch(
                    f"cache marker {key}={have!r} but current configuration wants {want!r}"
                )
