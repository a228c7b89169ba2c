"""Data model and ingestion for per-prompt generation sets.

A run is one (task, model) sampling pass: a manifest describing how the
samples were drawn, plus a JSONL stream of generations. Reasoning traces
are stripped at ingest time so every downstream metric sees final answers
only; samples are then grouped into fixed-size per-prompt sets.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import IngestError, InputError

STAGES = ("base", "sft", "dpo", "rl", "rl_zero_variant")
COT_MODES = ("thinking", "suppressed", "none")

DEFAULT_THINK_OPEN = "<think>"
DEFAULT_THINK_CLOSE = "</think>"


@dataclass(frozen=True)
class Sampling:
    temperature: float
    top_p: float
    max_tokens: int


@dataclass(frozen=True)
class RunManifest:
    model_id: str
    stage: str
    task_id: str
    k: int
    sampling: Sampling
    cot_mode: str
    tokenizer_vocab_size: int
    greedy_sample_index: int | None = None
    think_open: str = DEFAULT_THINK_OPEN
    think_close: str = DEFAULT_THINK_CLOSE

    def __post_init__(self):
        if self.stage not in STAGES:
            raise InputError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.cot_mode not in COT_MODES:
            raise InputError(f"unknown cot_mode {self.cot_mode!r}; expected one of {COT_MODES}")
        if self.k < 2:
            raise InputError(f"k must be >= 2, got {self.k}")
        if self.tokenizer_vocab_size < 2:
            raise InputError(f"tokenizer_vocab_size must be >= 2, got {self.tokenizer_vocab_size}")
        if self.greedy_sample_index is not None and not (0 <= self.greedy_sample_index < self.k):
            raise InputError(
                f"greedy_sample_index {self.greedy_sample_index} out of range for k={self.k}"
            )
        if not self.think_open or not self.think_close:
            raise InputError("think-tag literals must be non-empty")

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunManifest":
        try:
            sampling = Sampling(
                temperature=float(data["sampling"]["temperature"]),
                top_p=float(data["sampling"]["top_p"]),
                max_tokens=int(data["sampling"]["max_tokens"]),
            )
            return cls(
                model_id=str(data["model_id"]),
                stage=str(data["stage"]),
                task_id=str(data["task_id"]),
                k=int(data["k"]),
                sampling=sampling,
                cot_mode=str(data["cot_mode"]),
                tokenizer_vocab_size=int(data["tokenizer_vocab_size"]),
                greedy_sample_index=(
                    int(data["greedy_sample_index"])
                    if data.get("greedy_sample_index") is not None
                    else None
                ),
                think_open=str(data.get("think_open", DEFAULT_THINK_OPEN)),
                think_close=str(data.get("think_close", DEFAULT_THINK_CLOSE)),
            )
        except KeyError as e:
            raise InputError(f"manifest missing field {e.args[0]!r}") from e

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        d = {
            "model_id": self.model_id,
            "stage": self.stage,
            "task_id": self.task_id,
            "k": self.k,
            "sampling": {
                "temperature": self.sampling.temperature,
                "top_p": self.sampling.top_p,
                "max_tokens": self.sampling.max_tokens,
            },
            "cot_mode": self.cot_mode,
            "tokenizer_vocab_size": self.tokenizer_vocab_size,
            "think_open": self.think_open,
            "think_close": self.think_close,
        }
        if self.greedy_sample_index is not None:
            d["greedy_sample_index"] = self.greedy_sample_index
        return d


@dataclass(frozen=True)
class SampleRecord:
    task_id: str
    prompt_id: str
    model_id: str
    sample_index: int
    raw_text: str
    answer_text: str
    truncated_think: bool
    meta: Mapping | None = None


@dataclass(frozen=True)
class PromptGroup:
    task_id: str
    prompt_id: str
    model_id: str
    samples: tuple[SampleRecord, ...]

    @property
    def k(self) -> int:
        return len(self.samples)

    @property
    def answer_texts(self) -> list[str]:
        return [s.answer_text for s in self.samples]

    def empty_answer_count(self) -> int:
        return sum(1 for s in self.samples if not s.answer_text)


def strip_reasoning(
    raw_text: str,
    open_tag: str = DEFAULT_THINK_OPEN,
    close_tag: str = DEFAULT_THINK_CLOSE,
) -> tuple[str, bool]:
    """Remove reasoning-trace spans, returning (answer_text, truncated_think).

    All complete open..close spans are removed (shortest match, repeated).
    An opening tag that never closes means the reasoning never concluded,
    so there is no final answer: the result is ("", True). A close tag with
    no matching open (e.g. the open tag was prefilled into the prompt)
    ends the trace: everything up to and including the last such close tag
    is dropped. Leading whitespace of the remainder is trimmed.
    """
    text = raw_text
    while True:
        start = text.find(open_tag)
        if start < 0:
            break
        end = text.find(close_tag, start + len(open_tag))
        if end < 0:
            return "", True
        text = text[:start] + text[end + len(close_tag):]
    orphan = text.rfind(close_tag)
    if orphan >= 0:
        text = text[orphan + len(close_tag):]
    return text.lstrip(), False


_REQUIRED_FIELDS = ("task", "prompt_id", "model", "sample_index", "text")


def ingest_generations(
    lines: Iterable[str],
    manifest: RunManifest,
    strict: bool = False,
    issues: list[str] | None = None,
) -> list[SampleRecord]:
    """Parse a generations.jsonl stream into think-stripped SampleRecords.

    In strict mode any malformed line, field mismatch, out-of-range or
    duplicate sample index raises IngestError with the offending line
    number; otherwise the record is skipped and a note appended to
    ``issues``.
    """
    records: list[SampleRecord] = []
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
        missing = [f for f in _REQUIRED_FIELDS if f not in obj]
        if missing:
            problem(f"missing field(s) {missing}", line_no)
            continue
        if obj["task"] != manifest.task_id:
            problem(f"task {obj['task']!r} does not match manifest task {manifest.task_id!r}", line_no)
            continue
        if obj["model"] != manifest.model_id:
            problem(
                f"model {obj['model']!r} does not match manifest model {manifest.model_id!r}", line_no
            )
            continue
        try:
            idx = int(obj["sample_index"])
        except (TypeError, ValueError):
            problem(f"sample_index {obj['sample_index']!r} is not an integer", line_no)
            continue
        if not (0 <= idx < manifest.k):
            problem(f"sample_index {idx} out of range for k={manifest.k}", line_no)
            continue
        key = (str(obj["prompt_id"]), idx)
        if key in seen:
            problem(f"duplicate (prompt_id, sample_index) = {key}", line_no)
            continue
        seen.add(key)
        answer, truncated = strip_reasoning(
            str(obj["text"]), manifest.think_open, manifest.think_close
        )
        records.append(
            SampleRecord(
                task_id=manifest.task_id,
                prompt_id=str(obj["prompt_id"]),
                model_id=manifest.model_id,
                sample_index=idx,
                raw_text=str(obj["text"]),
                answer_text=answer,
                truncated_think=truncated,
                meta=obj.get("meta"),
            )
        )
    return records


def group_by_prompt(
    records: Sequence[SampleRecord],
    manifest: RunManifest,
    strict: bool = False,
    issues: list[str] | None = None,
) -> list[PromptGroup]:
    """Group records into per-prompt sets of exactly K samples.

    Incomplete groups (or groups whose sample indices are not 0..K-1) are
    rejected in strict mode and skipped with a note otherwise. Groups are
    returned sorted by prompt_id, samples sorted by sample_index.
    """
    by_prompt: dict[str, list[SampleRecord]] = {}
    for rec in records:
        by_prompt.setdefault(rec.prompt_id, []).append(rec)

    groups: list[PromptGroup] = []
    for prompt_id in sorted(by_prompt):
        samples = sorted(by_prompt[prompt_id], key=lambda r: r.sample_index)
        indices = [s.sample_index for s in samples]
        if len(samples) != manifest.k or indices != list(range(manifest.k)):
            msg = (
                f"prompt {prompt_id!r}: expected sample indices 0..{manifest.k - 1}, "
                f"got {indices}"
            )
            if strict:
                raise IngestError(msg)
            if issues is not None:
                issues.append(msg)
            continue
        groups.append(
            PromptGroup(
                task_id=samples[0].task_id,
                prompt_id=prompt_id,
                model_id=samples[0].model_id,
                samples=tuple(samples),
            )
        )
    return groups


def flatten(groups: Iterable[PromptGroup]) -> Iterator[SampleRecord]:
    for g in groups:
        yield from g.samples
