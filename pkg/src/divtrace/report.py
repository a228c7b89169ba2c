"""Deterministic report writers and figure rendering.

Every writer sorts rows, sorts JSON keys, and uses fixed float
formatting, so rerunning a command over unchanged inputs reproduces the
output files byte for byte. No timestamps are embedded anywhere.
Figures are optional companions rendered next to the delimited output.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import __version__


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_jsonl(path, records: Sequence[Mapping]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def run_metadata(command: str, config: Mapping, extra: Mapping | None = None) -> dict:
    """Provenance block embedded next to every report: tool version, the
    resolved flags, and the measurement conventions in force."""
    meta = {
        "tool": "divtrace",
        "version": __version__,
        "command": command,
        "config": dict(config),
        "conventions": {
            "think_strip": "complete spans removed; unterminated open tag yields empty answer",
            "ead": "n-gram counts pooled across samples; mean over defined n in 1..5; clipped to [0,1]",
            "sentence_split": "terminal punctuation + whitespace, or newline",
            "nli_truncation": "sentence pairs aligned by position, truncated to the shorter output",
            "eigenvalue_floor": 1e-12,
            "subtree_height_bound": "complete subtrees only, leaf height 1",
            "decontam_tokenizer": "word-punct-lower-v1",
            "coverage": "union of matching windows; punctuation tokens count",
        },
    }
    if extra:
        meta.update(extra)
    return meta


def _finish(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def fig_metric_by_task(values: Mapping[str, float], title: str, ylabel: str, out_path) -> Path:
    """One bar per task."""
    tasks = sorted(values)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(tasks) + 2.0), 4.0))
    ax.bar(range(len(tasks)), [values[t] for t in tasks], color="#4878d0")
    ax.set_xticks(range(len(tasks)))
    ax.set_xticklabels(tasks, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return _finish(fig, out_path)


def fig_stage_deltas(
    rows: Sequence[tuple[str, Mapping[str, float]]], stages: Sequence[str], out_path
) -> Path:
    """Grouped bars: per task, the percent-of-base change at each stage."""
    tasks = [task for task, _ in rows]
    fig, ax = plt.subplots(figsize=(max(7.0, 0.8 * len(tasks) + 2.0), 4.5))
    width = 0.8 / max(len(stages), 1)
    for s_i, stage in enumerate(stages):
        xs = [i + s_i * width for i in range(len(tasks))]
        ys = [deltas.get(stage, 0.0) for _, deltas in rows]
        ax.bar(xs, ys, width=width, label=stage)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(tasks))])
    ax.set_xticklabels(tasks, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("change, % of base")
    ax.set_title("per-stage diversity change")
    ax.legend(fontsize=8)
    return _finish(fig, out_path)


def fig_quality_vs_diversity(
    points: Sequence[tuple[str, float, float]], xlabel: str, ylabel: str, out_path
) -> Path:
    """Labeled scatter, one point per (task or model)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for label, x, y in points:
        ax.scatter([x], [y], s=24, color="#d65f5f")
        ax.annotate(label, (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(f"{ylabel} vs {xlabel}")
    return _finish(fig, out_path)


def fig_coverage_matrix(
    tasks: Sequence[str], corpora: Sequence[str], matrix: Sequence[Sequence[float]], out_path
) -> Path:
    """Heatmap of contamination percent per (task, corpus)."""
    fig, ax = plt.subplots(figsize=(2.0 + 0.8 * len(corpora), 1.5 + 0.4 * len(tasks)))
    im = ax.imshow(matrix, cmap="YlOrRd", vmin=0.0, aspect="auto")
    ax.set_xticks(range(len(corpora)))
    ax.set_xticklabels(corpora, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(tasks)))
    ax.set_yticklabels(tasks, fontsize=8)
    for i in range(len(tasks)):
        for j in range(len(corpora)):
            ax.text(j, i, f"{matrix[i][j]:.1f}", ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax, label="token coverage, %")
    ax.set_title("corpus overlap")
    return _finish(fig, out_path)
