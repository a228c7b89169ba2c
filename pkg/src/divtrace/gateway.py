"""Access to learned scorers: embedding files, an HTTP scorer client,
and a content-addressed response cache.

Embeddings either come precomputed in a binary row file or are fetched
from a scorer service speaking a small JSON protocol (POST /v1/embed,
POST /v1/nli, GET /healthz). Responses are cached on disk keyed by
(model tag, input text), so reruns over the same corpus never touch the
network.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import PromptGroup
from .divmetrics import PROB_SUM_TOL
from .errors import (
    InputError,
    ScorerError,
    ScorerProtocolError,
    ScorerUnavailableError,
)

EMB_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIQ")  # magic, dim, row_count

# public checkpoint names the measurements were produced with; override
# with --model-tag / ScorerConfig when pointing at a different scorer
DEFAULT_TEXT_EMBEDDER = "all-mpnet-base-v2"
DEFAULT_CODE_EMBEDDER = "unixcoder-base"
DEFAULT_NLI_MODEL = "roberta-large-mnli"

NORM_WARN_TOL = 1e-3


def _index_path(path: Path) -> Path:
    return path.with_name(path.name + ".index.jsonl")


def write_embedding_file(
    path,
    rows: np.ndarray,
    entries: Sequence[Mapping],
):
    """Write a binary embedding file plus its JSONL row index.

    Layout: magic "EMB1", uint32 dim, uint64 row count, then float32
    little-endian rows. Rows are unit-normalized on write; a zero row is
    an error. Each entry carries prompt_id, sample_index, model_tag.
    """
    rows = np.asarray(rows, dtype=np.float32)
    if rows.ndim != 2:
        raise InputError(f"rows must be 2-D, got shape {rows.shape}")
    if len(entries) != rows.shape[0]:
        raise InputError(f"{rows.shape[0]} rows but {len(entries)} index entries")
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        raise InputError("cannot normalize a zero embedding row")
    rows = (rows / norms[:, None]).astype(np.float32)

    path = Path(path)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(EMB_MAGIC, rows.shape[1], rows.shape[0]))
        f.write(rows.astype("<f4").tobytes())
    with open(_index_path(path), "w", encoding="utf-8") as f:
        for row, entry in enumerate(entries):
            rec = {
                "row": row,
                "prompt_id": entry["prompt_id"],
                "sample_index": int(entry["sample_index"]),
                "model_tag": entry["model_tag"],
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_embedding_file(path) -> tuple[np.ndarray, list[dict], dict]:
    """Read rows, index entries, and read-time stats.

    Rows are renormalized to unit length; the worst deviation found is
    reported in the stats so drifted files are visible. Zero rows and
    truncated files are errors.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as e:
        raise InputError(f"no such embedding file: {path}") from e
    if len(blob) < _HEADER.size:
        raise InputError(f"{path}: too short for a header")
    magic, dim, row_count = _HEADER.unpack_from(blob)
    if magic != EMB_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * dim * row_count
    if len(blob) != expected:
        raise InputError(f"{path}: expected {expected} bytes for {row_count}x{dim}, got {len(blob)}")
    rows = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(row_count, dim)
    rows = rows.astype(np.float64)
    if not np.all(np.isfinite(rows)):
        raise InputError(f"{path}: non-finite embedding values")
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise InputError(f"{path}: zero embedding row")
    max_dev = float(np.max(np.abs(norms - 1.0))) if row_count else 0.0
    rows = rows / norms[:, None]

    entries: list[dict] = []
    index_file = _index_path(path)
    if not index_file.exists():
        raise InputError(f"missing row index {index_file}")
    with open(index_file, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                entries.append(json.loads(line))
    if len(entries) != row_count:
        raise InputError(f"{index_file}: {len(entries)} entries for {row_count} rows")
    stats = {"rows": int(row_count), "dim": int(dim), "max_norm_deviation": max_dev,
             "renormalized": bool(max_dev > NORM_WARN_TOL)}
    return rows, entries, stats


class EmbeddingStore:
    """Lookup from (prompt_id, sample_index) to a precomputed row."""

    def __init__(self):
        self._rows: dict[tuple[str, int], np.ndarray] = {}
        self.dim: int | None = None
        self.model_tags: set[str] = set()
        self.max_norm_deviation = 0.0

    def add_file(self, path):
        rows, entries, stats = read_embedding_file(path)
        if self.dim is None:
            self.dim = stats["dim"]
        elif self.dim != stats["dim"]:
            raise InputError(f"{path}: dim {stats['dim']} conflicts with {self.dim}")
        self.max_norm_deviation = max(self.max_norm_deviation, stats["max_norm_deviation"])
        for entry in entries:
            key = (str(entry["prompt_id"]), int(entry["sample_index"]))
            self._rows[key] = rows[int(entry["row"])]
            self.model_tags.add(entry["model_tag"])
        return stats

    @classmethod
    def from_paths(cls, paths) -> "EmbeddingStore":
        store = cls()
        for p in paths:
            store.add_file(p)
        return store

    def __len__(self) -> int:
        return len(self._rows)

    def matrix_for_group(self, group: PromptGroup) -> np.ndarray:
        missing = [
            (group.prompt_id, i) for i in range(group.k) if (group.prompt_id, i) not in self._rows
        ]
        if missing:
            raise ScorerError(f"no embedding rows for {missing}")
        return np.stack([self._rows[(group.prompt_id, i)] for i in range(group.k)])


class DiskCache:
    """Content-addressed byte store under cache_dir/<kind>/aa/<hash>."""

    def __init__(self, root):
        self.root = Path(root)

    @staticmethod
    def key(*parts: str) -> str:
        return hashlib.sha256("\0".join(parts).encode()).hexdigest()

    def _path(self, kind: str, key: str) -> Path:
        return self.root / kind / key[:2] / key

    def get(self, kind: str, key: str) -> bytes | None:
        path = self._path(kind, key)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            return None

    def put(self, kind: str, key: str, data: bytes):
        path = self._path(kind, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_bytes(data)
        tmp.replace(path)


@dataclass
class ScorerConfig:
    """Exactly one of endpoint (HTTP scorer) or embeddings_path (file of
    precomputed rows) selects the backing."""

    endpoint: str | None = None
    embeddings_path: str | None = None
    model_tag: str = DEFAULT_TEXT_EMBEDDER
    nli_model_tag: str = DEFAULT_NLI_MODEL
    batch_size: int = 32
    timeout: float = 30.0
    max_in_flight: int = 4
    retries: int = 3
    backoff: float = 0.5
    bearer_token: str | None = None
    cache_dir: str | None = None

    def __post_init__(self):
        if (self.endpoint is None) == (self.embeddings_path is None):
            raise InputError("configure exactly one of endpoint or embeddings_path")
        if self.batch_size < 1 or self.max_in_flight < 1:
            raise InputError("batch_size and max_in_flight must be >= 1")
        if self.retries < 0 or self.backoff < 0 or self.timeout <= 0:
            raise InputError("retries/backoff must be >= 0 and timeout > 0")


Transport = Callable[[str, dict], dict]


def _requests_transport(config: ScorerConfig) -> Transport:
    import requests

    session = requests.Session()
    if config.bearer_token:
        session.headers["Authorization"] = f"Bearer {config.bearer_token}"
    base = config.endpoint.rstrip("/")

    def transport(path: str, payload: dict) -> dict:
        try:
            resp = session.post(base + path, json=payload, timeout=config.timeout)
        except requests.RequestException as e:
            raise ScorerUnavailableError(f"POST {path}: {e}") from e
        if resp.status_code >= 500:
            raise ScorerUnavailableError(f"POST {path}: HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise ScorerProtocolError(
                f"POST {path}: HTTP {resp.status_code}: {resp.text[:200]}"
            )
        try:
            return resp.json()
        except ValueError as e:
            raise ScorerProtocolError(f"POST {path}: response is not JSON") from e

    return transport


def healthcheck(endpoint: str, timeout: float = 5.0) -> bool:
    import requests

    try:
        resp = requests.get(endpoint.rstrip("/") + "/healthz", timeout=timeout)
    except requests.RequestException:
        return False
    return resp.status_code == 200


class HttpScorerClient:
    """Batched, cached, bounded-concurrency client for the scorer protocol.

    Identical texts within one call are scored once and share a row.
    Transient failures are retried with a fixed backoff; protocol
    violations (wrong dim, bad probabilities, non-JSON) are not.
    """

    def __init__(self, config: ScorerConfig, transport: Transport | None = None):
        if config.endpoint is None:
            raise InputError("HTTP scorer client needs an endpoint")
        self.config = config
        self._transport = transport or _requests_transport(config)
        self._cache = DiskCache(config.cache_dir) if config.cache_dir else None
        self._lock = threading.Lock()
        self.stats = {"requests": 0, "cache_hits": 0, "truncated": 0}

    def _post(self, path: str, payload: dict) -> dict:
        attempts = self.config.retries + 1
        for attempt in range(attempts):
            try:
                result = self._transport(path, payload)
            except ScorerUnavailableError:
                if attempt == attempts - 1:
                    raise
                time.sleep(self.config.backoff)
                continue
            with self._lock:
                self.stats["requests"] += 1
                self.stats["truncated"] += int(result.get("truncated", 0)) if isinstance(result, dict) else 0
            return result
        raise AssertionError("unreachable")

    def _map_batches(self, path: str, payloads: list[dict]) -> list[dict]:
        if len(payloads) == 1:
            return [self._post(path, payloads[0])]
        workers = min(self.config.max_in_flight, len(payloads))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(self._post, path, p) for p in payloads]
            return [f.result() for f in futures]

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Unit-norm float32 rows, one per text, duplicates shared."""
        model = self.config.model_tag
        rows: dict[str, np.ndarray] = {}
        pending: list[str] = []
        for text in texts:
            if text in rows or text in pending:
                continue
            if self._cache is not None:
                hit = self._cache.get("embed", DiskCache.key(model, text))
                if hit is not None:
                    rows[text] = np.frombuffer(hit, dtype="<f4")
                    with self._lock:
                        self.stats["cache_hits"] += 1
                    continue
            pending.append(text)

        if pending:
            chunks = [
                pending[i : i + self.config.batch_size]
                for i in range(0, len(pending), self.config.batch_size)
            ]
            payloads = [{"model": model, "texts": chunk} for chunk in chunks]
            for chunk, result in zip(chunks, self._map_batches("/v1/embed", payloads)):
                vectors = result.get("vectors")
                dim = result.get("dim")
                if not isinstance(vectors, list) or len(vectors) != len(chunk):
                    raise ScorerProtocolError(
                        f"expected {len(chunk)} vectors, got {type(vectors).__name__}"
                    )
                for text, vec in zip(chunk, vectors):
                    row = np.asarray(vec, dtype=np.float64)
                    if row.ndim != 1 or (dim is not None and row.shape[0] != dim):
                        raise ScorerProtocolError(f"embedding row has shape {row.shape}, dim {dim}")
                    norm = float(np.linalg.norm(row))
                    if not np.isfinite(norm) or norm == 0.0:
                        raise ScorerProtocolError("scorer returned a zero or non-finite embedding")
                    row = (row / norm).astype("<f4")
                    rows[text] = row
                    if self._cache is not None:
                        self._cache.put("embed", DiskCache.key(model, text), row.tobytes())

        dims = {r.shape[0] for r in rows.values()}
        if len(dims) > 1:
            raise ScorerProtocolError(f"inconsistent embedding dims {sorted(dims)}")
        return np.stack([rows[t] for t in texts]).astype(np.float32)

    def nli(self, pairs: Sequence[tuple[str, str]]) -> np.ndarray:
        """(entail, neutral, contradict) probability rows, one per pair."""
        model = self.config.nli_model_tag
        probs: dict[tuple[str, str], np.ndarray] = {}
        pending: list[tuple[str, str]] = []
        for pair in pairs:
            if pair in probs or pair in pending:
                continue
            if self._cache is not None:
                hit = self._cache.get("nli", DiskCache.key(model, pair[0], pair[1]))
                if hit is not None:
                    probs[pair] = np.frombuffer(hit, dtype="<f8")
                    with self._lock:
                        self.stats["cache_hits"] += 1
                    continue
            pending.append(pair)

        if pending:
            chunks = [
                pending[i : i + self.config.batch_size]
                for i in range(0, len(pending), self.config.batch_size)
            ]
            payloads = [
                {"model": model, "pairs": [{"premise": p, "hypothesis": h} for p, h in chunk]}
                for chunk in chunks
            ]
            for chunk, result in zip(chunks, self._map_batches("/v1/nli", payloads)):
                triples = result.get("probs")
                if not isinstance(triples, list) or len(triples) != len(chunk):
                    raise ScorerProtocolError(
                        f"expected {len(chunk)} probability triples, got {type(triples).__name__}"
                    )
                for pair, triple in zip(chunk, triples):
                    row = np.asarray(triple, dtype="<f8")
                    if row.shape != (3,) or not np.all(np.isfinite(row)):
                        raise ScorerProtocolError(f"bad probability triple {triple!r}")
                    if abs(float(row.sum()) - 1.0) > PROB_SUM_TOL:
                        raise ScorerProtocolError(
                            f"probabilities sum to {float(row.sum()):.6f}, expected 1"
                        )
                    probs[pair] = row
                    if self._cache is not None:
                        self._cache.put("nli", DiskCache.key(model, pair[0], pair[1]), row.tobytes())

        return np.stack([probs[p] for p in pairs])

    def nli_scorer(self) -> Callable[[str, str], tuple[float, float, float]]:
        """Pairwise adapter for the sentence-level diversity metric."""

        def scorer(premise: str, hypothesis: str) -> tuple[float, float, float]:
            row = self.nli([(premise, hypothesis)])[0]
            return float(row[0]), float(row[1]), float(row[2])

        return scorer
