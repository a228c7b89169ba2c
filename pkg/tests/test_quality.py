"""Answer extraction, voting, pass@k, win rates, and score recentering."""
import json
import math
from fractions import Fraction
from itertools import combinations

import pytest
from hypothesis import given, strategies as st

from divtrace.errors import IngestError, InputError
from divtrace.quality import (
    CorrectnessLabel,
    JudgeVerdict,
    QualitySummary,
    accuracy_at_1,
    consistency,
    extract_answer,
    labels_by_prompt,
    majority_vote,
    pass_at_k,
    pass_at_k_exact,
    read_labels,
    read_verdicts,
    summarize_quality,
    wb_score,
    win_rate,
)
from tests.helpers import make_group, make_manifest


def pass_oracle(n, c, k) -> Fraction:
    """Exhaustive subset enumeration."""
    flags = [True] * c + [False] * (n - c)
    hits = sum(1 for combo in combinations(range(n), k) if any(flags[i] for i in combo))
    return Fraction(hits, math.comb(n, k))


class TestExtractAnswer:
    def test_math_boxed(self):
        assert extract_answer(r"thus \boxed{42}", "math") == "42"

    def test_math_boxed_nested_braces(self):
        assert extract_answer(r"\boxed{\frac{1}{2}}", "math") == r"\frac{1}{2}"

    def test_math_last_boxed_wins(self):
        assert extract_answer(r"\boxed{1} then \boxed{2}", "math") == "2"

    def test_math_falls_back_to_last_number(self):
        assert extract_answer("first 3 then 7.", "math") == "7"

    def test_math_normalization(self):
        assert extract_answer(r"\boxed{1,234.50}", "math") == "1234.5"
        assert extract_answer("answer is 2.0", "math") == "2"

    def test_math_unbalanced_boxed_falls_back(self):
        assert extract_answer(r"\boxed{42 and also 7", "math") == "7"

    def test_math_none(self):
        assert extract_answer("no digits here", "math") is None

    def test_qa_last_nonempty_line(self):
        assert extract_answer("reasoning\n\nParis\n  \n", "qa") == "Paris"

    def test_qa_empty(self):
        assert extract_answer("  \n ", "qa") is None

    def test_code_first_fence(self):
        assert extract_answer("so:\n```python\nx = 1\n```\ntext", "code") == "x = 1\n"

    def test_code_without_fence_absent(self):
        assert extract_answer("x = 1", "code") is None

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            extract_answer("x", "poetry")


class TestMajorityVote:
    def test_most_frequent(self):
        assert majority_vote(["4", "5", "4", None]) == "4"

    def test_tie_breaks_to_earliest(self):
        assert majority_vote(["b", "a", "b", "a"]) == "b"

    def test_absent_ignored(self):
        assert majority_vote([None, "x", None]) == "x"

    def test_all_absent(self):
        assert majority_vote([None, None]) is None


class TestPassAtK:
    def test_frozen_value(self):
        assert pass_at_k(16, 4, 5) == 0.8186813186813187

    def test_matches_enumeration_small(self):
        for n in range(1, 9):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    assert pass_at_k_exact(n, c, k) == pass_oracle(n, c, k)

    def test_none_correct(self):
        assert pass_at_k(10, 0, 3) == 0.0

    def test_guaranteed_hit_when_k_exceeds_wrong_count(self):
        assert pass_at_k(10, 8, 3) == 1.0
        assert pass_at_k_exact(10, 8, 3) == Fraction(1)

    def test_monotone_in_k(self):
        values = [pass_at_k(12, 3, k) for k in range(1, 13)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("n,c,k", [(5, 6, 1), (5, -1, 1), (5, 2, 0), (5, 2, 6)])
    def test_bad_arguments(self, n, c, k):
        with pytest.raises(InputError):
            pass_at_k(n, c, k)

    @given(st.integers(1, 20), st.data())
    def test_k_equals_one_is_plain_accuracy(self, n, data):
        c = data.draw(st.integers(0, n))
        assert pass_at_k_exact(n, c, 1) == Fraction(c, n)


def label(prompt_id, idx, correct, **kw):
    return CorrectnessLabel(prompt_id=prompt_id, sample_index=idx, correct=correct, **kw)


class TestLabelsAndAccuracy:
    def test_strict_requires_loose(self):
        with pytest.raises(InputError):
            label("p", 0, True, strict=True, loose=False)

    def test_greedy_index_from_manifest(self):
        manifest = make_manifest(k=4, greedy_sample_index=3)
        group = make_group(["a", "b", "c", "d"])
        labels = {i: label("p", i, i == 3) for i in range(4)}
        assert accuracy_at_1(group, labels, manifest) == 1

    def test_greedy_defaults_to_index_zero(self):
        manifest = make_manifest(k=2)
        group = make_group(["a", "b"])
        labels = {0: label("p", 0, False), 1: label("p", 1, True)}
        assert accuracy_at_1(group, labels, manifest) == 0

    def test_missing_greedy_label(self):
        manifest = make_manifest(k=2)
        with pytest.raises(InputError, match="greedy"):
            accuracy_at_1(make_group(["a", "b"]), {1: label("p", 1, True)}, manifest)

    def test_consistency(self):
        labels = [label("p", i, i < 3) for i in range(4)]
        assert consistency(labels) == 0.75
        with pytest.raises(InputError):
            consistency([])


class TestWbScore:
    def test_recentering(self):
        assert wb_score(7.3) == 4.6
        assert wb_score(4.0) == -2.0
        assert wb_score(5.0) == 0.0

    def test_range_endpoints(self):
        assert wb_score(1.0) == -8.0
        assert wb_score(10.0) == 10.0 - 10.0 + 10.0 - 10.0 + 10.0  # 10 -> (10-5)*2

    @pytest.mark.parametrize("raw", [0.5, 10.1, -3.0])
    def test_out_of_range(self, raw):
        with pytest.raises(InputError):
            wb_score(raw)


def verdict(prompt_id, order, outcome):
    return JudgeVerdict(prompt_id=prompt_id, order=order, outcome=outcome)


class TestWinRate:
    def test_sweep_and_split(self):
        verdicts = [
            verdict("p1", "ab", "win_a"), verdict("p1", "ba", "win_b"),  # wins both: 1
            verdict("p2", "ab", "win_a"), verdict("p2", "ba", "win_a"),  # split: 0.5
            verdict("p3", "ab", "win_b"), verdict("p3", "ba", "win_a"),  # loses both: 0
        ]
        assert win_rate(verdicts) == pytest.approx(100.0 * (1 + 0.5 + 0) / 3)

    def test_tie_counts_half(self):
        verdicts = [verdict("p", "ab", "tie"), verdict("p", "ba", "tie")]
        assert win_rate(verdicts) == 50.0

    def test_unpaired_strict(self):
        with pytest.raises(InputError, match="both"):
            win_rate([verdict("p", "ab", "win_a")], strict=True)

    def test_unpaired_lenient_skipped(self):
        issues = []
        verdicts = [
            verdict("p1", "ab", "win_a"), verdict("p1", "ba", "win_b"),
            verdict("p2", "ab", "win_a"),
        ]
        assert win_rate(verdicts, issues=issues) == 100.0
        assert issues

    def test_duplicate_order_strict(self):
        with pytest.raises(InputError, match="duplicate"):
            win_rate([verdict("p", "ab", "win_a"), verdict("p", "ab", "win_a")], strict=True)

    def test_invalid_order_and_outcome(self):
        with pytest.raises(InputError):
            verdict("p", "aa", "win_a")
        with pytest.raises(InputError):
            verdict("p", "ab", "draw")

    def test_no_judged_prompts(self):
        with pytest.raises(InputError):
            win_rate([])


class TestQualitySummary:
    def test_percent_bounds(self):
        with pytest.raises(InputError):
            QualitySummary(acc_at_1=101.0)

    def test_pass_must_be_nondecreasing(self):
        with pytest.raises(InputError, match="non-decreasing"):
            QualitySummary(pass_at_k={1: 50.0, 5: 40.0})

    def test_partial_summaries_allowed(self):
        s = QualitySummary(acc_at_1=56.0, mv_at_k=80.4)
        assert s.consistency is None


class TestSummarizeQuality:
    def make_run(self):
        manifest = make_manifest(k=4, task_id="math")
        texts_by_prompt = {
            "p1": [r"\boxed{4}", r"\boxed{4}", r"\boxed{5}", r"\boxed{4}"],
            "p2": [r"\boxed{1}", r"\boxed{2}", r"\boxed{2}", r"\boxed{3}"],
        }
        groups = [make_group(texts, prompt_id=pid) for pid, texts in texts_by_prompt.items()]
        gold = {"p1": "4", "p2": "7"}
        labels = {
            "p1": {i: label("p1", i, ans == "4") for i, ans in enumerate(["4", "4", "5", "4"])},
            "p2": {i: label("p2", i, False) for i in range(4)},
        }
        return manifest, groups, labels, gold

    def test_against_gold(self):
        manifest, groups, labels, gold = self.make_run()
        s = summarize_quality(groups, labels, manifest, ks=(1, 2, 4), gold=gold)
        assert s.acc_at_1 == 50.0      # p1 greedy correct, p2 not
        assert s.mv_at_k == 50.0       # vote "4" matches gold on p1; "2" misses on p2
        assert s.consistency == pytest.approx(100.0 * (3 / 4 + 0) / 2)
        assert s.pass_at_k[4] == pytest.approx(100.0 * (1.0 + 0.0) / 2)
        assert s.pass_at_k[1] == pytest.approx(100.0 * (3 / 4 + 0) / 2)

    def test_mv_correctness_from_labels_without_gold(self):
        manifest, groups, labels, _ = self.make_run()
        s = summarize_quality(groups, labels, manifest, ks=(1,))
        # p1: vote "4" first produced by a correct sample; p2: vote "2" by incorrect
        assert s.mv_at_k == 50.0

    def test_requires_full_label_cover(self):
        manifest, groups, labels, _ = self.make_run()
        del labels["p2"][3]
        with pytest.raises(InputError, match="cover"):
            summarize_quality(groups, labels, manifest, ks=(1, 4))

    def test_k_beyond_sample_count(self):
        manifest, groups, labels, _ = self.make_run()
        with pytest.raises(InputError, match="pass@8"):
            summarize_quality(groups, labels, manifest, ks=(8,))


class TestIngestSideFiles:
    def test_read_labels(self):
        manifest = make_manifest()
        lines = [
            json.dumps({"task": "t", "model": "m", "prompt_id": "p", "sample_index": 0,
                        "correct": True, "strict": True, "loose": True}),
            json.dumps({"prompt_id": "p", "sample_index": 1, "correct": False}),
        ]
        labels = read_labels(lines, manifest)
        by_prompt = labels_by_prompt(labels)
        assert by_prompt["p"][0].strict is True
        assert by_prompt["p"][1].correct is False

    def test_read_labels_rejects_mismatched_run(self):
        manifest = make_manifest()
        line = json.dumps({"task": "other", "prompt_id": "p", "sample_index": 0, "correct": True})
        with pytest.raises(IngestError, match="task"):
            read_labels([line], manifest, strict=True)

    def test_read_labels_duplicate(self):
        line = json.dumps({"prompt_id": "p", "sample_index": 0, "correct": True})
        with pytest.raises(IngestError, match="duplicate"):
            read_labels([line, line], strict=True)

    def test_read_verdicts(self):
        lines = [json.dumps({"prompt_id": "p", "order": "ab", "outcome": "win_a"})]
        got = read_verdicts(lines)
        assert got[0].candidate_won

    def test_read_verdicts_bad_line_lenient(self):
        issues = []
        got = read_verdicts(["{bad", json.dumps({"prompt_id": "p", "order": "ba", "outcome": "tie"})],
                            issues=issues)
        assert len(got) == 1 and issues
