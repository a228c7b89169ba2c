"""Second-order analyses over per-prompt metrics.

Three questions about a diversity drop: how much survives after
conditioning on correctness (quality-filtered decomposition), which
post-training stage caused it (per-stage attribution against the base
model), and how much verifiable headroom the surviving spread still buys
(majority-vote gain). Stage attribution is computed in exact rational
arithmetic so the per-stage deltas telescope to the retained fraction
with no float residue.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .corpus import PromptGroup, STAGES
from .divmetrics import cosine_diversity, vendi
from .errors import InputError, MetricUndefinedError
from .quality import QualitySummary


@dataclass(frozen=True)
class QfdRecord:
    """All-sample vs correct-only diversity for one prompt group."""

    d_all: float
    vendi_all: float
    k_correct: int
    d_correct: float | None = None
    vendi_correct: float | None = None

    def __post_init__(self):
        defined = self.d_correct is not None and self.vendi_correct is not None
        if defined != (self.k_correct >= 2):
            raise InputError(
                "correct-only diversity must be present exactly when >= 2 samples are correct"
            )


def qfd(
    group: PromptGroup,
    correct: Sequence[bool],
    embeddings: np.ndarray,
) -> QfdRecord:
    """Diversity over all K samples and over the correct subset.

    The correct subset keeps row order, so an all-correct group yields a
    correct-only value identical to the all-sample one. Fewer than two
    correct samples leaves the conditioned values undefined.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    if len(correct) != group.k or E.shape[0] != group.k:
        raise InputError(
            f"prompt {group.prompt_id!r}: need {group.k} labels and embedding rows, "
            f"got {len(correct)} and {E.shape[0]}"
        )
    d_all = cosine_diversity(E)
    v_all = vendi(E)
    idx = [i for i, ok in enumerate(correct) if ok]
    if len(idx) >= 2:
        sub = E[idx]
        return QfdRecord(
            d_all=d_all,
            vendi_all=v_all,
            k_correct=len(idx),
            d_correct=cosine_diversity(sub),
            vendi_correct=vendi(sub),
        )
    return QfdRecord(d_all=d_all, vendi_all=v_all, k_correct=len(idx))


@dataclass(frozen=True)
class TaskQfd:
    """Per-task means of the per-prompt decomposition."""

    d_all: float
    vendi_all: float
    d_correct: float | None
    vendi_correct: float | None
    n_prompts: int
    n_conditioned_undefined: int


def aggregate_qfd(records: Sequence[QfdRecord]) -> TaskQfd:
    if not records:
        raise InputError("no decomposition records to aggregate")
    conditioned = [r for r in records if r.d_correct is not None]
    return TaskQfd(
        d_all=float(np.mean([r.d_all for r in records])),
        vendi_all=float(np.mean([r.vendi_all for r in records])),
        d_correct=float(np.mean([r.d_correct for r in conditioned])) if conditioned else None,
        vendi_correct=float(np.mean([r.vendi_correct for r in conditioned])) if conditioned else None,
        n_prompts=len(records),
        n_conditioned_undefined=len(records) - len(conditioned),
    )


def genuine_fraction(base, model) -> float | None:
    """Share of the base-to-model diversity drop that survives
    conditioning on correctness: (base.d_correct - model.d_correct) /
    (base.d_all - model.d_all).

    Values above 1 (conditioned diversity dropped harder) are reported as
    computed. None when the model did not drop below the base at all.
    Both records must carry conditioned values.
    """
    for rec, name in ((base, "base"), (model, "model")):
        if rec.d_correct is None:
            raise MetricUndefinedError(f"{name} record has no correct-only diversity")
    drop_all = base.d_all - model.d_all
    if drop_all <= 0:
        return None
    return (base.d_correct - model.d_correct) / drop_all


@dataclass(frozen=True)
class StageSeries:
    """One task-level metric tracked along a post-training lineage,
    base first."""

    task_id: str
    stages: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if len(self.stages) < 2:
            raise InputError(f"task {self.task_id!r}: a lineage needs at least two stages")
        tags = [tag for tag, _ in self.stages]
        if tags[0] != "base":
            raise InputError(f"task {self.task_id!r}: lineage must start at base, got {tags[0]!r}")
        order = [STAGES.index(t) if t in STAGES else -1 for t in tags]
        if min(order) < 0:
            raise InputError(f"task {self.task_id!r}: unknown stage in {tags}")
        if any(b <= a for a, b in zip(order, order[1:])):
            raise InputError(f"task {self.task_id!r}: stages out of lineage order: {tags}")
        if self.stages[0][1] <= 0:
            raise InputError(f"task {self.task_id!r}: base value must be positive")


@dataclass(frozen=True)
class StageAttribution:
    task_id: str
    deltas: tuple[tuple[str, float], ...]  # percent of base, per stage
    retained: float  # percent of base surviving the full lineage
    exact_deltas: tuple[Fraction, ...]
    exact_retained: Fraction


def stage_loss(series: StageSeries) -> StageAttribution:
    """Per-stage change as percent of the base value.

    delta_s = 100 * (v_s - v_{s-1}) / v_base; retained = 100 * v_final /
    v_base. Computed as exact rationals (floats are rationals), so
    sum(deltas) == retained - 100 holds identically; float views are
    provided for reporting.
    """
    values = [Fraction(v) for _, v in series.stages]
    base = values[0]
    exact_deltas = tuple(100 * (b - a) / base for a, b in zip(values, values[1:]))
    exact_retained = 100 * values[-1] / base
    return StageAttribution(
        task_id=series.task_id,
        deltas=tuple(
            (tag, float(d)) for (tag, _), d in zip(series.stages[1:], exact_deltas)
        ),
        retained=float(exact_retained),
        exact_deltas=exact_deltas,
        exact_retained=exact_retained,
    )


def mv_gain(summary: QualitySummary) -> float:
    """Majority-vote accuracy minus greedy accuracy, in points."""
    if summary.mv_at_k is None or summary.acc_at_1 is None:
        raise InputError("majority-vote gain needs both mv_at_k and acc_at_1")
    return summary.mv_at_k - summary.acc_at_1


@dataclass(frozen=True)
class LengthSummary:
    n_samples: int
    mean_words: float
    min_words: int
    max_words: int


def length_summary(groups: Sequence[PromptGroup]) -> LengthSummary:
    """Whitespace word counts over every answer text in the groups."""
    counts = [len(s.answer_text.split()) for g in groups for s in g.samples]
    if not counts:
        raise InputError("no samples to summarize")
    return LengthSummary(
        n_samples=len(counts),
        mean_words=float(np.mean(counts)),
        min_words=min(counts),
        max_words=max(counts),
    )
