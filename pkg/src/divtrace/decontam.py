"""Corpus-membership scanning via fingerprinted 13-gram windows.

An index holds 64-bit fingerprints of every n-token window of a training
corpus, sharded and sorted for memory-mapped lookup. An evaluation
instance is scored by the fraction of its tokens covered by at least one
window whose fingerprint appears in the index; fingerprint collisions can
only over-report contamination, never hide it.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

DEFAULT_N = 13
TOKENIZER_TAG = "word-punct-lower-v1"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

# odd multiplier for the rolling polynomial; 64-bit golden-ratio constant
_MULT = np.uint64(0x9E3779B97F4A7C15)


def word_tokens(text: str) -> list[str]:
    """Lowercased words and punctuation marks; punctuation counts as
    tokens for both indexing and coverage."""
    return _TOKEN_RE.findall(text.lower())


class _TokenHasher:
    """Memoized 64-bit token hashes; corpora repeat tokens heavily."""

    def __init__(self):
        self._cache: dict[str, int] = {}

    def __call__(self, token: str) -> int:
        h = self._cache.get(token)
        if h is None:
            h = int.from_bytes(
                hashlib.blake2b(token.encode(), digest_size=8).digest(), "big"
            )
            self._cache[token] = h
        return h

    def hash_many(self, tokens: Sequence[str]) -> np.ndarray:
        cache = self._cache
        for token in set(tokens).difference(cache):
            cache[token] = int.from_bytes(
                hashlib.blake2b(token.encode(), digest_size=8).digest(), "big"
            )
        return np.fromiter(map(cache.__getitem__, tokens), dtype=np.uint64, count=len(tokens))


def window_fingerprints(
    tokens: Sequence[str], n: int, hasher: _TokenHasher | None = None
) -> np.ndarray:
    """Fingerprints of all n-token windows, as uint64; empty when the
    instance has fewer than n tokens.

    Polynomial combination of per-token hashes in window order, evaluated
    with one vectorized pass per offset.
    """
    count = len(tokens) - n + 1
    if count <= 0:
        return np.empty(0, dtype=np.uint64)
    hasher = hasher or _TokenHasher()
    hashed = hasher.hash_many(tokens)
    out = hashed[:count].copy()
    for offset in range(1, n):
        out *= _MULT
        out += hashed[offset : offset + count]
    return out


class NgramIndex:
    """Sharded sorted-array membership set of window fingerprints."""

    def __init__(self, n: int = DEFAULT_N, shard_bits: int = 4, tokenizer_tag: str = TOKENIZER_TAG):
        if n < 1:
            raise InputError(f"n must be >= 1, got {n}")
        if not (0 <= shard_bits <= 16):
            raise InputError(f"shard_bits must be in [0, 16], got {shard_bits}")
        self.n = n
        self.shard_bits = shard_bits
        self.tokenizer_tag = tokenizer_tag
        self.doc_count = 0
        self.window_count = 0
        self._hasher = _TokenHasher()
        self._buffer: list[np.ndarray] = []
        self._spilled: list[list[np.ndarray]] = [[] for _ in range(1 << shard_bits)]
        self._shards: list[np.ndarray] | None = None

    @property
    def shard_count(self) -> int:
        return 1 << self.shard_bits

    def _shard_of(self, fps: np.ndarray) -> np.ndarray:
        if self.shard_bits == 0:
            return np.zeros(len(fps), dtype=np.uint64)
        return fps >> np.uint64(64 - self.shard_bits)

    def add_document(self, text_or_tokens: str | Sequence[str]):
        if self._shards is not None:
            raise InputError("index is frozen; no further documents can be added")
        tokens = (
            word_tokens(text_or_tokens)
            if isinstance(text_or_tokens, str)
            else list(text_or_tokens)
        )
        fps = window_fingerprints(tokens, self.n, self._hasher)
        self.doc_count += 1
        self.window_count += len(fps)
        if len(fps):
            self._buffer.append(fps)

    def spill(self):
        """Deduplicate buffered fingerprints into per-shard sorted blocks;
        call periodically when indexing more than fits in memory.

        Shards are the top fingerprint bits, so one global sort leaves the
        array shard-contiguous and the split is two searchsorted cuts.
        """
        if not self._buffer:
            return
        merged = np.unique(np.concatenate(self._buffer))
        self._buffer.clear()
        if self.shard_bits == 0:
            self._spilled[0].append(merged)
            return
        edges = np.arange(1, self.shard_count, dtype=np.uint64) << np.uint64(64 - self.shard_bits)
        for s, block in enumerate(np.split(merged, np.searchsorted(merged, edges))):
            if len(block):
                self._spilled[s].append(block)

    def freeze(self):
        """Sort and deduplicate; required before lookups."""
        if self._shards is not None:
            return
        self.spill()
        shards = []
        for blocks in self._spilled:
            if blocks:
                shards.append(np.unique(np.concatenate(blocks)))
            else:
                shards.append(np.empty(0, dtype=np.uint64))
        self._shards = shards
        self._spilled = [[] for _ in range(self.shard_count)]

    @property
    def fingerprint_count(self) -> int:
        if self._shards is None:
            raise InputError("index must be frozen before counting distinct fingerprints")
        return int(sum(len(s) for s in self._shards))

    def contains_batch(self, fps: np.ndarray) -> np.ndarray:
        """Boolean membership per fingerprint."""
        if self._shards is None:
            raise InputError("index must be frozen before lookups")
        fps = np.asarray(fps, dtype=np.uint64)
        hits = np.zeros(len(fps), dtype=bool)
        if len(fps) == 0:
            return hits
        shard_ids = self._shard_of(fps)
        for s in np.unique(shard_ids):
            mask = shard_ids == s
            arr = self._shards[int(s)]
            if len(arr) == 0:
                continue
            queries = fps[mask]
            pos = np.searchsorted(arr, queries)
            pos = np.minimum(pos, len(arr) - 1)
            hits[mask] = arr[pos] == queries
        return hits

    def __contains__(self, fp: int) -> bool:
        return bool(self.contains_batch(np.array([fp], dtype=np.uint64))[0])

    def save(self, directory):
        """Write header.json plus one sorted little-endian uint64 file per
        shard."""
        if self._shards is None:
            raise InputError("freeze the index before saving")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        header = {
            "format": "ngram-index-v1",
            "n": self.n,
            "tokenizer_tag": self.tokenizer_tag,
            "fingerprint_bits": 64,
            "shard_bits": self.shard_bits,
            "doc_count": self.doc_count,
            "window_count": self.window_count,
            "fingerprint_count": self.fingerprint_count,
        }
        (directory / "header.json").write_text(
            json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        for s, arr in enumerate(self._shards):
            arr.astype("<u8").tofile(directory / f"shard-{s:04x}.u64")

    @classmethod
    def load(cls, directory) -> "NgramIndex":
        directory = Path(directory)
        try:
            header = json.loads((directory / "header.json").read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise InputError(f"not an index directory (no header.json): {directory}") from e
        if header.get("format") != "ngram-index-v1":
            raise InputError(f"unrecognized index format {header.get('format')!r}")
        index = cls(
            n=int(header["n"]),
            shard_bits=int(header["shard_bits"]),
            tokenizer_tag=str(header["tokenizer_tag"]),
        )
        index.doc_count = int(header["doc_count"])
        index.window_count = int(header["window_count"])
        shards = []
        for s in range(index.shard_count):
            path = directory / f"shard-{s:04x}.u64"
            if path.exists():
                shards.append(np.fromfile(path, dtype="<u8").astype(np.uint64))
            else:
                shards.append(np.empty(0, dtype=np.uint64))
        index._shards = shards
        return index


@dataclass(frozen=True)
class CoverageResult:
    covered: int
    total: int
    coverage: float  # fraction in [0, 1]
    prompt_id: str | None = None


def coverage(
    tokens_or_text: str | Sequence[str],
    index: NgramIndex,
    prompt_id: str | None = None,
    tokenizer_tag: str | None = None,
) -> CoverageResult:
    """Fraction of instance tokens inside at least one indexed window.

    Windows overlap, so covered positions are the union. Instances
    shorter than n tokens have coverage 0 by construction.
    """
    if tokenizer_tag is not None and tokenizer_tag != index.tokenizer_tag:
        raise InputError(
            f"tokenizer mismatch: instance {tokenizer_tag!r} vs index {index.tokenizer_tag!r}"
        )
    tokens = (
        word_tokens(tokens_or_text) if isinstance(tokens_or_text, str) else list(tokens_or_text)
    )
    total = len(tokens)
    if total < index.n:
        return CoverageResult(covered=0, total=total, coverage=0.0, prompt_id=prompt_id)
    fps = window_fingerprints(tokens, index.n)
    hits = index.contains_batch(fps)
    mask = np.zeros(total, dtype=bool)
    for i in np.nonzero(hits)[0]:
        mask[i : i + index.n] = True
    covered = int(mask.sum())
    return CoverageResult(
        covered=covered, total=total, coverage=covered / total, prompt_id=prompt_id
    )


def contamination_score(instances: Iterable[str | Sequence[str]], index: NgramIndex) -> float:
    """Mean per-instance coverage, as a percent."""
    fractions = [coverage(inst, index).coverage for inst in instances]
    if not fractions:
        raise InputError("no instances to score")
    return 100.0 * float(np.mean(fractions))
