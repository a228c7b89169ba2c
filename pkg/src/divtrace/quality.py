"""Verifiable-quality scoring over per-prompt generation sets.

Covers answer extraction for math/qa/code outputs, majority voting,
the unbiased pass@k estimator, judged win rates, and the recentering of
1-10 judge scores onto a [-8, 8] scale. Correctness labels and judge
verdicts arrive as JSONL side files keyed like the generations.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .corpus import PromptGroup, RunManifest
from .errors import IngestError, InputError

TASK_KINDS = ("math", "qa", "code")

_NUMBER_RE = re.compile(r"-?\d[\d,]*(?:\.\d+)?")
_BOXED = "\\boxed{"
_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class CorrectnessLabel:
    prompt_id: str
    sample_index: int
    correct: bool
    strict: bool | None = None
    loose: bool | None = None
    extracted_answer: str | None = None

    def __post_init__(self):
        if self.strict and self.loose is False:
            raise InputError(
                f"prompt {self.prompt_id!r} sample {self.sample_index}: "
                "strict pass requires loose pass"
            )


VERDICT_ORDERS = ("ab", "ba")
VERDICT_OUTCOMES = ("win_a", "win_b", "tie")


@dataclass(frozen=True)
class JudgeVerdict:
    prompt_id: str
    order: str  # candidate in slot a for "ab", slot b for "ba"
    outcome: str

    def __post_init__(self):
        if self.order not in VERDICT_ORDERS:
            raise InputError(f"unknown order {self.order!r}; expected one of {VERDICT_ORDERS}")
        if self.outcome not in VERDICT_OUTCOMES:
            raise InputError(f"unknown outcome {self.outcome!r}; expected one of {VERDICT_OUTCOMES}")

    @property
    def candidate_won(self) -> bool:
        return self.outcome == ("win_a" if self.order == "ab" else "win_b")

    @property
    def candidate_lost(self) -> bool:
        return self.outcome == ("win_b" if self.order == "ab" else "win_a")


def _normalize_number(text: str) -> str:
    s = text.replace(",", "").strip()
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return s


def _last_boxed(text: str) -> str | None:
    start = text.rfind(_BOXED)
    if start < 0:
        return None
    depth = 1
    i = start + len(_BOXED)
    while i < len(text):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start + len(_BOXED) : i]
        i += 1
    return None  # unbalanced; fall back to last-number


def extract_answer(text: str, task_kind: str) -> str | None:
    """Pull the comparable final answer out of an output.

    math: content of the last \\boxed{...}, else the last number in the
    text, with thousands separators and trailing fractional zeros
    normalized away. qa: the last non-empty line. code: the first fenced
    code block. Returns None when nothing matches.
    """
    if task_kind not in TASK_KINDS:
        raise InputError(f"unknown task kind {task_kind!r}; expected one of {TASK_KINDS}")
    if task_kind == "math":
        boxed = _last_boxed(text)
        if boxed is not None:
            return _normalize_number(boxed)
        numbers = _NUMBER_RE.findall(text)
        return _normalize_number(numbers[-1]) if numbers else None
    if task_kind == "qa":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        return lines[-1] if lines else None
    m = _FENCE_RE.search(text)
    return m.group(1) if m else None


def majority_vote(answers: Sequence[str | None]) -> str | None:
    """Most frequent non-absent answer; ties break to the earliest first
    occurrence. None when every answer is absent."""
    present = [a for a in answers if a is not None]
    if not present:
        return None
    counts = Counter(present)
    best = max(counts, key=lambda a: (counts[a], -present.index(a)))
    return best


def pass_at_k_exact(n: int, c: int, k: int) -> Fraction:
    """P(at least one of k drawn from n contains a correct one), exactly:
    1 - prod_{i=0}^{k-1} (n-c-i)/(n-i)."""
    if not (0 <= c <= n):
        raise InputError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not (1 <= k <= n):
        raise InputError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n - c < k:
        return Fraction(1)
    miss = Fraction(1)
    for i in range(k):
        miss *= Fraction(n - c - i, n - i)
    return 1 - miss


def pass_at_k(n: int, c: int, k: int) -> float:
    return float(pass_at_k_exact(n, c, k))


def accuracy_at_1(
    group: PromptGroup,
    labels: Mapping[int, CorrectnessLabel],
    manifest: RunManifest,
) -> int:
    """Correctness (0/1) of the designated greedy sample, index 0 when the
    manifest does not designate one."""
    idx = manifest.greedy_sample_index if manifest.greedy_sample_index is not None else 0
    label = labels.get(idx)
    if label is None:
        raise InputError(f"prompt {group.prompt_id!r}: no label for greedy sample index {idx}")
    return int(label.correct)


def consistency(labels: Sequence[CorrectnessLabel]) -> float:
    """Fraction of the K samples that are correct."""
    if not labels:
        raise InputError("consistency needs at least one label")
    return sum(1 for l in labels if l.correct) / len(labels)


def wb_score(raw: float) -> float:
    """Recenter a 1-10 judge score to (raw - 5) * 2, range [-8, 8]."""
    if not (1.0 <= raw <= 10.0):
        raise InputError(f"judge score {raw} outside [1, 10]")
    return (raw - 5.0) * 2.0


def win_rate(
    verdicts: Sequence[JudgeVerdict],
    strict: bool = False,
    issues: list[str] | None = None,
) -> float:
    """Percent of prompts won, both presentation orders judged per prompt.

    A prompt scores 1 when the candidate wins in both orders, 0 when it
    loses both, 0.5 otherwise. Prompts missing an order (or judged twice
    in the same order) are an error in strict mode and skipped otherwise.
    """
    by_prompt: dict[str, dict[str, JudgeVerdict]] = {}
    for v in verdicts:
        slot = by_prompt.setdefault(v.prompt_id, {})
        if v.order in slot:
            msg = f"prompt {v.prompt_id!r}: duplicate verdict for order {v.order!r}"
            if strict:
                raise InputError(msg)
            if issues is not None:
                issues.append(msg)
            continue
        slot[v.order] = v

    scores = []
    for prompt_id in sorted(by_prompt):
        slot = by_prompt[prompt_id]
        if set(slot) != set(VERDICT_ORDERS):
            msg = f"prompt {prompt_id!r}: verdicts present for orders {sorted(slot)}, need both"
            if strict:
                raise InputError(msg)
            if issues is not None:
                issues.append(msg)
            continue
        wins = sum(1 for v in slot.values() if v.candidate_won)
        losses = sum(1 for v in slot.values() if v.candidate_lost)
        scores.append(1.0 if wins == 2 else 0.0 if losses == 2 else 0.5)
    if not scores:
        raise InputError("no fully judged prompts")
    return 100.0 * sum(scores) / len(scores)


@dataclass
class QualitySummary:
    acc_at_1: float | None = None
    mv_at_k: float | None = None
    pass_at_k: Mapping[int, float] = field(default_factory=dict)
    consistency: float | None = None
    win_rate: float | None = None
    wb_score: float | None = None

    def __post_init__(self):
        for name in ("acc_at_1", "mv_at_k", "consistency", "win_rate"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 100.0):
                raise InputError(f"{name}={v} outside [0, 100]")
        ks = sorted(self.pass_at_k)
        for v in (self.pass_at_k[k] for k in ks):
            if not (0.0 <= v <= 100.0):
                raise InputError(f"pass@k value {v} outside [0, 100]")
        for lo, hi in zip(ks, ks[1:]):
            if self.pass_at_k[hi] < self.pass_at_k[lo]:
                raise InputError(
                    f"pass@{hi} < pass@{lo}: the estimator is non-decreasing in k"
                )


def summarize_quality(
    groups: Sequence[PromptGroup],
    labels: Mapping[str, Mapping[int, CorrectnessLabel]],
    manifest: RunManifest,
    task_kind: str = "math",
    ks: Sequence[int] = (1, 16),
    gold: Mapping[str, str] | None = None,
) -> QualitySummary:
    """Aggregate per-prompt correctness into task-level percents.

    Majority-vote correctness compares the voted answer against gold when
    provided, otherwise against the label of the first sample that
    produced the voted answer.
    """
    if not groups:
        raise InputError("no prompt groups to summarize")
    ks = sorted(set(ks))
    if ks and ks[-1] > manifest.k:
        raise InputError(f"pass@{ks[-1]} requested but only k={manifest.k} samples drawn")

    acc_hits = 0
    mv_hits = 0
    pass_totals = {k: 0.0 for k in ks}
    cons_total = 0.0
    for g in groups:
        per_prompt = labels.get(g.prompt_id)
        if per_prompt is None or len(per_prompt) != g.k:
            raise InputError(f"prompt {g.prompt_id!r}: labels do not cover all {g.k} samples")
        acc_hits += accuracy_at_1(g, per_prompt, manifest)
        ordered = [per_prompt[i] for i in range(g.k)]
        c = sum(1 for l in ordered if l.correct)
        cons_total += c / g.k
        for k in ks:
            pass_totals[k] += pass_at_k(g.k, c, k)

        answers = [
            per_prompt[i].extracted_answer
            if per_prompt[i].extracted_answer is not None
            else extract_answer(g.samples[i].answer_text, task_kind)
            for i in range(g.k)
        ]
        voted = majority_vote(answers)
        if voted is None:
            continue
        if gold is not None and g.prompt_id in gold:
            target = gold[g.prompt_id]
            if task_kind == "math":
                target = _normalize_number(target)
            mv_hits += int(voted == target)
        else:
            first = next(i for i, a in enumerate(answers) if a == voted)
            mv_hits += int(ordered[first].correct)

    n = len(groups)
    return QualitySummary(
        acc_at_1=100.0 * acc_hits / n,
        mv_at_k=100.0 * mv_hits / n,
        pass_at_k={k: 100.0 * pass_totals[k] / n for k in ks},
        consistency=100.0 * cons_total / n,
    )


def read_labels(
    lines: Iterable[str],
    manifest: RunManifest | None = None,
    strict: bool = False,
    issues: list[str] | None = None,
) -> list[CorrectnessLabel]:
    """Parse a labels.jsonl stream; schema mirrors generations.jsonl with
    ``correct`` plus optional ``strict``/``loose``/``extracted_answer``."""
    labels: list[CorrectnessLabel] = []
    seen: set[tuple[str, int]] = set()

    def problem(msg: str, line_no: int):
        if strict:
            raise IngestError(msg, line_no=line_no)
        if issues is not None:
            issues.append(f"line {line_no}: {msg}")

    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            problem(f"malformed JSON ({e.msg})", line_no)
            continue
        missing = [f for f in ("prompt_id", "sample_index", "correct") if f not in obj]
        if missing:
            problem(f"missing field(s) {missing}", line_no)
            continue
        if manifest is not None:
            if "task" in obj and obj["task"] != manifest.task_id:
                problem(f"task {obj['task']!r} does not match manifest", line_no)
                continue
            if "model" in obj and obj["model"] != manifest.model_id:
                problem(f"model {obj['model']!r} does not match manifest", line_no)
                continue
        key = (str(obj["prompt_id"]), int(obj["sample_index"]))
        if key in seen:
            problem(f"duplicate label for {key}", line_no)
            continue
        seen.add(key)
        try:
            labels.append(
                CorrectnessLabel(
                    prompt_id=key[0],
                    sample_index=key[1],
                    correct=bool(obj["correct"]),
                    strict=obj.get("strict"),
                    loose=obj.get("loose"),
                    extracted_answer=obj.get("extracted_answer"),
                )
            )
        except InputError as e:
            problem(str(e), line_no)
    return labels


def labels_by_prompt(
    labels: Sequence[CorrectnessLabel],
) -> dict[str, dict[int, CorrectnessLabel]]:
    out: dict[str, dict[int, CorrectnessLabel]] = {}
    for label in labels:
        out.setdefault(label.prompt_id, {})[label.sample_index] = label
    return out


def read_verdicts(
    lines: Iterable[str],
    strict: bool = False,
    issues: list[str] | None = None,
) -> list[JudgeVerdict]:
    """Parse a verdicts.jsonl stream of pairwise judge outcomes."""
    verdicts: list[JudgeVerdict] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            verdicts.append(
                JudgeVerdict(
                    prompt_id=str(obj["prompt_id"]),
                    order=str(obj["order"]),
                    outcome=str(obj["outcome"]),
                )
            )
        except (json.JSONDecodeError, KeyError, InputError) as e:
            if strict:
                raise IngestError(str(e), line_no=line_no) from e
            if issues is not None:
                issues.append(f"line {line_no}: {e}")
    return verdicts


def correct_mask(
    per_prompt: Mapping[int, CorrectnessLabel], k: int
) -> list[bool]:
    """Labels as a K-vector of booleans aligned with sample order."""
    if len(per_prompt) != k or set(per_prompt) != set(range(k)):
        raise InputError(f"labels cover indices {sorted(per_prompt)}, need 0..{k - 1}")
    return [per_prompt[i].correct for i in range(k)]
