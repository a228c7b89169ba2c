"""Subtree-multiset extraction and the Jaccard distance on programs."""
import numpy as np
import pytest

from divtrace.codemetrics import (
    SubtreeMultiset,
    ast_jaccard,
    code_group_diversity,
    first_code_block,
    parse_python,
    subtree_multiset,
)
from divtrace.errors import InputError, MetricUndefinedError, ParseError
from tests.helpers import make_group

rng = np.random.default_rng(42)


def random_multiset(g) -> SubtreeMultiset:
    n_keys = int(g.integers(0, 8))
    counts = {int(k): int(g.integers(1, 5)) for k in g.choice(50, size=n_keys, replace=False)}
    return SubtreeMultiset(counts=counts, node_total=sum(counts.values()))


class TestSubtreeMultiset:
    def test_single_literal_program(self):
        m = subtree_multiset("42")
        assert m.node_total >= 1
        assert len(m.counts) >= 1

    def test_height_bound_excludes_tall_subtrees(self):
        deep = "def f(a, b):\n    if a:\n        if b:\n            return 1\n    return 0"
        bounded = subtree_multiset(deep, max_height=2)
        unbounded = subtree_multiset(deep, max_height=100)
        assert bounded.node_total < unbounded.node_total

    def test_unbounded_counts_every_node(self):
        source = "x = 1\ny = x + 2\n"
        m = subtree_multiset(source, max_height=1_000)
        n_nodes = sum(1 for _ in __import__("ast").walk(__import__("ast").parse(source)))
        assert m.node_total == n_nodes

    def test_truncated_views_count_every_node(self):
        deep = "def f(a):\n    if a:\n        if a:\n            if a:\n                return a"
        m = subtree_multiset(deep, max_height=3, truncated_views=True)
        n_nodes = sum(1 for _ in __import__("ast").walk(__import__("ast").parse(deep)))
        assert m.node_total == n_nodes

    def test_identifier_names_abstracted(self):
        a = subtree_multiset("def f(a, b):\n    return a + b")
        b = subtree_multiset("def add(left, right):\n    return left + right")
        assert a.counts == b.counts

    def test_literal_values_abstracted_within_kind(self):
        assert subtree_multiset("x = 1").counts == subtree_multiset("y = 2").counts

    def test_literal_kinds_distinguished(self):
        assert subtree_multiset("x = 1").counts != subtree_multiset("x = '1'").counts

    def test_unparseable_source(self):
        with pytest.raises(ParseError):
            subtree_multiset("def f(:")

    def test_bad_height(self):
        with pytest.raises(InputError):
            subtree_multiset("x = 1", max_height=0)

    def test_pluggable_parse(self):
        def parse(_source):
            return ("root", (("leaf", ()), ("leaf", ())))

        m = subtree_multiset("anything", parse=parse)
        assert m.node_total == 3
        assert len(m.counts) == 2  # two identical leaves share a hash

    def test_renaming_invariance_holds_under_truncated_views(self):
        a = subtree_multiset("def f(a, b):\n    return a * b", truncated_views=True)
        b = subtree_multiset("def g(x, y):\n    return x * y", truncated_views=True)
        assert ast_jaccard(a, b) == 0.0


class TestAstJaccard:
    def test_identity(self):
        m = subtree_multiset("for i in range(3):\n    print(i)")
        assert ast_jaccard(m, m) == 0.0

    def test_disjoint_multisets(self):
        a = SubtreeMultiset(counts={1: 2}, node_total=2)
        b = SubtreeMultiset(counts={2: 3}, node_total=3)
        assert ast_jaccard(a, b) == 1.0

    def test_structural_change_registers(self):
        a = subtree_multiset("x = 1")
        b = subtree_multiset("if x:\n    pass")
        assert ast_jaccard(a, b) > 0.0

    def test_both_empty_undefined(self):
        empty = SubtreeMultiset(counts={}, node_total=0)
        with pytest.raises(MetricUndefinedError):
            ast_jaccard(empty, empty)

    def test_one_empty_is_maximal(self):
        empty = SubtreeMultiset(counts={}, node_total=0)
        assert ast_jaccard(empty, subtree_multiset("x = 1")) == 1.0

    def test_metric_properties_on_random_multisets(self):
        g = np.random.default_rng(7)
        for _ in range(400):
            a, b, c = (random_multiset(g) for _ in range(3))
            if not a.counts and not b.counts:
                continue
            d_ab = ast_jaccard(a, b)
            assert 0.0 <= d_ab <= 1.0
            assert d_ab == ast_jaccard(b, a)
            if a.counts == b.counts:
                assert d_ab == 0.0
            if a.counts and b.counts and c.counts:
                assert ast_jaccard(a, c) <= d_ab + ast_jaccard(b, c) + 1e-12


class TestFirstCodeBlock:
    def test_extracts_fenced_block(self):
        text = "Here:\n```python\nx = 1\n```\nand more\n```\ny = 2\n```"
        assert first_code_block(text) == "x = 1\n"

    def test_no_fence_returns_whole_text(self):
        assert first_code_block("x = 1") == "x = 1"


class TestCodeGroupDiversity:
    def test_restricted_to_correct_and_parseable(self):
        group = make_group([
            "```\ndef f(a):\n    return a\n```",
            "```\ndef g(b):\n    return b\n```",
            "```\nwhile (((\n```",        # correct label, unparseable
            "```\nraise SystemExit\n```",  # incorrect label
        ])
        correct = {0: True, 1: True, 2: True, 3: False}
        assert code_group_diversity(group, correct) == 0.0  # the two survivors are renamings

    def test_fewer_than_two_usable(self):
        group = make_group(["```\nx = 1\n```", "```\ny = 2\n```"])
        assert code_group_diversity(group, {0: True, 1: False}) is None

    def test_mean_over_pairs(self):
        group = make_group(["x = 1", "x = 1", "if x:\n    pass"])
        correct = {0: True, 1: True, 2: True}
        d = ast_jaccard(subtree_multiset("x = 1"), subtree_multiset("if x:\n    pass"))
        assert code_group_diversity(group, correct) == pytest.approx((0.0 + d + d) / 3)

    def test_parse_streak_matches_reference_grammar(self):
        source = "def f(x):\n    return [y for y in x if y]\n"
        assert parse_python(source)[0] == "Module"
