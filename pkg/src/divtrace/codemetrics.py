"""Structural diversity for code outputs.

Each program is summarized as a multiset of hashes of its bounded-height
complete subtrees; two programs are compared by multiset Jaccard distance.
Identifier names and literal values are abstracted away so renamings do
not register as structural change. Parsing is pluggable: anything that
maps source text to a kind-labeled ordered tree works; the default is the
Python grammar.
"""
from __future__ import annotations

import ast
import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .corpus import PromptGroup
from .errors import InputError, MetricUndefinedError, ParseError

DEFAULT_MAX_HEIGHT = 4

# label, ordered children
Tree = tuple[str, tuple]
ParseFn = Callable[[str], Tree]

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def first_code_block(text: str) -> str:
    """Body of the first fenced code block, or the whole text if none."""
    m = _FENCE_RE.search(text)
    return m.group(1) if m else text


def _ast_label(node: ast.AST) -> str:
    # value *kind* only: 1 and 2 collide, 1 and "1" do not
    if isinstance(node, ast.Constant):
        return f"Constant:{type(node.value).__name__}"
    return type(node).__name__


def parse_python(source: str) -> Tree:
    try:
        root = ast.parse(source)
    except (SyntaxError, ValueError) as e:
        raise ParseError(f"not parseable as Python: {e}") from e

    def convert(node: ast.AST) -> Tree:
        return (_ast_label(node), tuple(convert(c) for c in ast.iter_child_nodes(node)))

    return convert(root)


def _subtree_hash(label: str, child_hashes: Sequence[int]) -> int:
    payload = label.encode() + b"(" + b",".join(h.to_bytes(8, "big") for h in child_hashes) + b")"
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


@dataclass(frozen=True)
class SubtreeMultiset:
    counts: Mapping[int, int]
    node_total: int


def subtree_multiset(
    source: str,
    max_height: int = DEFAULT_MAX_HEIGHT,
    truncated_views: bool = False,
    parse: ParseFn = parse_python,
) -> SubtreeMultiset:
    """Hash multiset of the program's subtrees of height <= max_height.

    A leaf has height 1. By default only complete subtrees (the node with
    all of its descendants) within the bound contribute; with
    truncated_views every node contributes the hash of its subtree cut at
    depth max_height, so tall trees still produce one entry per node.
    """
    if max_height < 1:
        raise InputError(f"max_height must be >= 1, got {max_height}")
    root = parse(source)
    counts: Counter[int] = Counter()

    if truncated_views:
        # hash of the view of `node` keeping `depth` levels
        def view_hash(node: Tree, depth: int) -> int:
            label, children = node
            if depth <= 1 or not children:
                return _subtree_hash(label, ())
            return _subtree_hash(label, [view_hash(c, depth - 1) for c in children])

        stack = [root]
        while stack:
            node = stack.pop()
            counts[view_hash(node, max_height)] += 1
            stack.extend(node[1])
    else:
        # post-order without recursion; Python's default limit is too low
        # for deeply right-leaning expression trees
        results: dict[int, tuple[int, int]] = {}  # id -> (height, hash)
        stack: list[tuple[Tree, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            label, children = node
            if not expanded:
                stack.append((node, True))
                stack.extend((c, False) for c in children)
            else:
                child_info = [results[id(c)] for c in children]
                height = 1 + max((h for h, _ in child_info), default=0)
                digest = _subtree_hash(label, [d for _, d in child_info])
                results[id(node)] = (height, digest)
                if height <= max_height:
                    counts[digest] += 1

    return SubtreeMultiset(counts=dict(counts), node_total=sum(counts.values()))


def ast_jaccard(a: SubtreeMultiset, b: SubtreeMultiset) -> float:
    """1 - multiset Jaccard similarity; 0 for structurally identical
    programs, 1 for programs sharing no bounded subtree."""
    if not a.counts and not b.counts:
        raise MetricUndefinedError("both multisets are empty")
    intersection = 0
    union = 0
    for key in a.counts.keys() | b.counts.keys():
        ca = a.counts.get(key, 0)
        cb = b.counts.get(key, 0)
        intersection += min(ca, cb)
        union += max(ca, cb)
    return 1.0 - intersection / union


def code_group_diversity(
    group: PromptGroup,
    correct: Mapping[int, bool],
    max_height: int = DEFAULT_MAX_HEIGHT,
    truncated_views: bool = False,
    parse: ParseFn = parse_python,
) -> float | None:
    """Mean pairwise subtree distance over the correct, parseable samples.

    ``correct`` maps sample_index to correctness. Unparseable samples are
    dropped; fewer than two usable programs leaves the metric undefined
    (None).
    """
    multisets = []
    for s in group.samples:
        if not correct.get(s.sample_index, False):
            continue
        try:
            multisets.append(
                subtree_multiset(
                    first_code_block(s.answer_text),
                    max_height=max_height,
                    truncated_views=truncated_views,
                    parse=parse,
                )
            )
        except ParseError:
            continue
    n = len(multisets)
    if n < 2:
        return None
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += ast_jaccard(multisets[i], multisets[j])
    return total / (n * (n - 1) / 2)
