"""Per-prompt output-diversity metrics over a K-sample generation set.

Four views of the same K outputs:

  - expectation-adjusted distinct n-grams (lexical),
  - mean pairwise cosine distance over embeddings (semantic),
  - entailment-based divergence over aligned sentence pairs (logical),
  - the exponential of the similarity-spectrum entropy, an effective
    count of distinct modes (1 = all identical, K = mutually orthogonal).
"""
from __future__ import annotations

import math
import re
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .corpus import PromptGroup
from .errors import InputError, MetricUndefinedError, ScorerError

EAD_MAX_N = 5
EIG_FLOOR = 1e-12
UNIT_NORM_TOL = 1e-6
PROB_SUM_TOL = 1e-4

_SURFACE_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

TokenSeq = Sequence[int] | Sequence[str]
NliScorer = Callable[[str, str], Sequence[float]]


def surface_tokens(text: str) -> list[str]:
    """Fallback tokenizer when model token ids were not recorded."""
    return _SURFACE_TOKEN_RE.findall(text)


def _check_tokens(tokens: TokenSeq, vocab_size: int):
    for t in tokens:
        if isinstance(t, (int, np.integer)):
            if not (0 <= t < vocab_size):
                raise InputError(f"token id {t} out of range for vocab size {vocab_size}")


def ead_n(outputs: Sequence[TokenSeq], n: int, vocab_size: int) -> float | None:
    """Distinct n-grams over total, corrected by the expected distinct count
    U / (V * (1 - ((V-1)/V)**T)) for T draws from a V-symbol vocabulary.

    n-gram counts are pooled across all K outputs before the correction.
    Returns None when no output yields any n-gram.
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if vocab_size < 2:
        raise InputError(f"vocab_size must be >= 2, got {vocab_size}")
    distinct: set[tuple] = set()
    total = 0
    for tokens in outputs:
        _check_tokens(tokens, vocab_size)
        count = len(tokens) - n + 1
        if count <= 0:
            continue
        total += count
        for i in range(count):
            distinct.add(tuple(tokens[i : i + n]))
    if total == 0:
        return None
    expected = vocab_size * (1.0 - ((vocab_size - 1) / vocab_size) ** total)
    return len(distinct) / expected


class EadScore(NamedTuple):
    value: float
    per_n: tuple[float | None, ...]


def ead(outputs: Sequence[TokenSeq], vocab_size: int) -> EadScore:
    """Mean of the defined per-n scores for n = 1..5, clipped to [0, 1]."""
    per_n = tuple(ead_n(outputs, n, vocab_size) for n in range(1, EAD_MAX_N + 1))
    defined = [v for v in per_n if v is not None]
    if not defined:
        raise MetricUndefinedError("untokenizable group: no n-grams at any order")
    value = min(max(sum(defined) / len(defined), 0.0), 1.0)
    return EadScore(value=value, per_n=per_n)


def tokenize_group(group: PromptGroup) -> list[TokenSeq]:
    """Token id sequences from recorded metadata when present, surface
    tokens of the answer text otherwise."""
    outputs: list[TokenSeq] = []
    for s in group.samples:
        ids = (s.meta or {}).get("token_ids")
        if ids is not None:
            outputs.append([int(t) for t in ids])
        else:
            outputs.append(surface_tokens(s.answer_text))
    return outputs


def check_embedding_matrix(embeddings: np.ndarray) -> np.ndarray:
    """Validate a K x d matrix of unit-norm rows (tolerance 1e-6)."""
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2:
        raise InputError(f"embedding matrix must be 2-D, got shape {E.shape}")
    if not np.all(np.isfinite(E)):
        raise InputError("embedding matrix contains non-finite values")
    norms = np.linalg.norm(E, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise InputError(f"embedding rows are not unit-norm (max deviation {worst:.3g})")
    return E


def similarity_kernel(embeddings: np.ndarray) -> np.ndarray:
    """Symmetric K x K cosine kernel with entries in [-1, 1]."""
    E = check_embedding_matrix(embeddings)
    G = E @ E.T
    G = (G + G.T) / 2.0
    return np.clip(G, -1.0, 1.0)


def cosine_diversity(embeddings: np.ndarray) -> float:
    """1 - mean pairwise cosine similarity; 0 iff all rows identical."""
    E = check_embedding_matrix(embeddings)
    k = E.shape[0]
    if k < 2:
        raise MetricUndefinedError(f"pairwise diversity needs >= 2 rows, got {k}")
    G = similarity_kernel(E)
    off_diag_sum = float(G.sum() - np.trace(G))
    mean_sim = off_diag_sum / (k * (k - 1))
    return 1.0 - mean_sim


def vendi(embeddings: np.ndarray) -> float:
    """exp of the Shannon entropy of the spectrum of the row-normalized
    cosine kernel. Eigenvalues below 1e-12 are treated as zero; the result
    is clamped to the mathematically attainable [1, K]."""
    E = check_embedding_matrix(embeddings)
    k = E.shape[0]
    if k < 1:
        raise MetricUndefinedError("vendi needs at least one row")
    G = similarity_kernel(E)
    eigvals = np.linalg.eigvalsh(G / k)
    eigvals = eigvals[eigvals > EIG_FLOOR]
    entropy = float(-np.sum(eigvals * np.log(eigvals)))
    return min(max(math.exp(entropy), 1.0), float(k))


_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+|\n+")


def sentence_split(text: str) -> list[str]:
    """Split on terminal punctuation followed by whitespace, and on
    newlines; empty pieces are dropped."""
    pieces = (p.strip() for p in _SENTENCE_SPLIT_RE.split(text))
    return [p for p in pieces if p]


def _check_prob_triple(probs: Sequence[float]) -> tuple[float, float, float]:
    if len(probs) != 3:
        raise InputError(f"expected (entail, neutral, contradict), got {len(probs)} values")
    e, n, c = (float(p) for p in probs)
    for p in (e, n, c):
        if not math.isfinite(p) or p < -PROB_SUM_TOL or p > 1.0 + PROB_SUM_TOL:
            raise InputError(f"probability {p} outside [0, 1]")
    if abs((e + n + c) - 1.0) > PROB_SUM_TOL:
        raise InputError(f"probabilities sum to {e + n + c}, expected 1 within {PROB_SUM_TOL}")
    return e, n, c


def nli_pair_score(p_ij: Sequence[float], p_ji: Sequence[float]) -> float:
    """Direction-symmetrized entailment-minus-contradiction; in [-1, 1]."""
    e_ij, _, c_ij = _check_prob_triple(p_ij)
    e_ji, _, c_ji = _check_prob_triple(p_ji)
    return 0.5 * ((e_ij - c_ij) + (e_ji - c_ji))


def nli_diversity(
    group: PromptGroup | Sequence[str], scorer: NliScorer
) -> float | None:
    """1 - mean pairwise symmetrized entailment score, in [0, 2].

    Outputs are compared sentence-by-sentence at matching positions,
    truncating to the shorter output. A pair where either side has no
    sentences scores 0 (no logical agreement measurable). Returns None
    when every output in the group is empty.
    """
    texts = group.answer_texts if isinstance(group, PromptGroup) else list(group)
    k = len(texts)
    if k < 2:
        raise MetricUndefinedError(f"pairwise diversity needs >= 2 outputs, got {k}")
    sentences = [sentence_split(t) for t in texts]
    if all(not s for s in sentences):
        return None

    total = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            si, sj = sentences[i], sentences[j]
            m = min(len(si), len(sj))
            if m == 0:
                continue
            pair_total = 0.0
            for t in range(m):
                try:
                    p_ij = scorer(si[t], sj[t])
                    p_ji = scorer(sj[t], si[t])
                except Exception as e:
                    raise ScorerError(
                        f"entailment scorer failed on outputs ({i}, {j}), sentence {t}: {e}"
                    ) from e
                pair_total += nli_pair_score(p_ij, p_ji)
            total += pair_total / m
    return 1.0 - (2.0 / (k * (k - 1))) * total
