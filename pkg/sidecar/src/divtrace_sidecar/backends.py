"""Model backends behind the scorer service.

A backend is resolved from a registry spec string at warm time. Only
deterministic ``builtin:`` backends ship here: a hash-seeded unit
embedder and a lexical-overlap entailment classifier. They are offline
stand-ins with the right shapes and invariants, not semantic models; a
weights-backed backend plugs in by returning objects with the same
attributes from :func:`resolve_backend`.

Spec grammar::

    builtin:hash-embed-<dim>[@<max_tokens>]
    builtin:overlap-nli[@<max_tokens>]
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# fixed wire order for probability triples; backends declare their own
# native head order and the service remaps
WIRE_LABELS = ("entailment", "neutral", "contradiction")

DEFAULT_MAX_TOKENS = 512

# served tags default to the public checkpoints the measurements were
# produced with; here they resolve to offline stand-ins
DEFAULT_REGISTRY = {
    "all-mpnet-base-v2": "builtin:hash-embed-768",
    "unixcoder-base": "builtin:hash-embed-768",
    "roberta-large-mnli": "builtin:overlap-nli",
}


class BackendError(ValueError):
    """A registry spec string does not resolve to a backend."""


def _seed(*parts: str) -> int:
    joined = "\0".join(parts).encode()
    return int.from_bytes(hashlib.blake2b(joined, digest_size=8).digest(), "big")


def _overlap_tokens(text: str) -> set[str]:
    return set(re.findall(r"\w+", text.lower()))


@dataclass(frozen=True)
class HashEmbedder:
    """Deterministic unit vectors seeded by (model_tag, text)."""

    model_tag: str
    dim: int
    max_tokens: int = DEFAULT_MAX_TOKENS
    kind: str = "embed"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = np.empty((len(texts), self.dim))
        for i, text in enumerate(texts):
            rng = np.random.default_rng(_seed(self.model_tag, text))
            row = rng.standard_normal(self.dim)
            norm = float(np.linalg.norm(row))
            if norm < 1e-9:
                row[0], norm = 1.0, 1.0
            rows[i] = row / norm
        return rows


@dataclass(frozen=True)
class OverlapNli:
    """Entailment probabilities from bag-of-words overlap.

    Identical sides score entailment-heavy, disjoint sides
    contradiction-heavy. Heads come out in this model's native order
    (contradiction, neutral, entailment), deliberately not the wire
    order, so the service-side remap is exercised for real.
    """

    model_tag: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    kind: str = "nli"
    label_order: tuple[str, str, str] = ("contradiction", "neutral", "entailment")

    def nli(self, pairs: Sequence[tuple[str, str]]) -> np.ndarray:
        rows = np.empty((len(pairs), 3))
        for i, (premise, hypothesis) in enumerate(pairs):
            a, b = _overlap_tokens(premise), _overlap_tokens(hypothesis)
            union = a | b
            j = len(a & b) / len(union) if union else 1.0
            novel = len(b - a) / len(b) if b else 0.0
            w_entail = 0.05 + 2.0 * j * j * (1.0 - 0.5 * novel)
            w_neutral = 0.25 + 0.5 * novel * (1.0 - j)
            w_contra = 0.05 + 1.2 * (1.0 - j) ** 2
            total = w_entail + w_neutral + w_contra
            rows[i] = (w_contra / total, w_neutral / total, w_entail / total)
        return rows


_EMBED_SPEC = re.compile(r"hash-embed-(\d+)")


def resolve_backend(model_tag: str, spec: str):
    """Turn a registry spec string into a ready backend for model_tag."""
    scheme, _, rest = spec.partition(":")
    if scheme != "builtin":
        raise BackendError(
            f"{model_tag}: unknown backend scheme {scheme!r} in {spec!r}; "
            "only builtin: backends ship with this service"
        )
    name, _, limit = rest.partition("@")
    if limit:
        try:
            max_tokens = int(limit)
        except ValueError:
            max_tokens = 0
        if max_tokens < 1:
            raise BackendError(f"{model_tag}: bad token limit {limit!r} in {spec!r}")
    else:
        max_tokens = DEFAULT_MAX_TOKENS

    if name == "overlap-nli":
        backend = OverlapNli(model_tag, max_tokens)
    else:
        m = _EMBED_SPEC.fullmatch(name)
        if m is None:
            raise BackendError(f"{model_tag}: unknown builtin backend {name!r} in {spec!r}")
        dim = int(m.group(1))
        if not 1 <= dim <= 8192:
            raise BackendError(f"{model_tag}: embedding dim {dim} out of range in {spec!r}")
        backend = HashEmbedder(model_tag, dim, max_tokens)

    order = getattr(backend, "label_order", None)
    if order is not None and sorted(order) != sorted(WIRE_LABELS):
        raise BackendError(f"{model_tag}: label order {order!r} is not a permutation of {WIRE_LABELS}")
    return backend
