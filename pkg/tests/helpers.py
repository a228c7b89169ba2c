"""Shared builders for test data."""
import json
from pathlib import Path

import numpy as np

from divtrace.corpus import PromptGroup, RunManifest, SampleRecord, Sampling


def make_group(texts, prompt_id="p", task_id="t", model_id="m"):
    samples = tuple(
        SampleRecord(
            task_id=task_id, prompt_id=prompt_id, model_id=model_id, sample_index=i,
            raw_text=text, answer_text=text, truncated_think=False,
        )
        for i, text in enumerate(texts)
    )
    return PromptGroup(task_id=task_id, prompt_id=prompt_id, model_id=model_id, samples=samples)


def make_manifest(**overrides) -> RunManifest:
    fields = dict(
        model_id="m",
        stage="base",
        task_id="t",
        k=2,
        sampling=Sampling(temperature=0.6, top_p=0.95, max_tokens=512),
        cot_mode="none",
        tokenizer_vocab_size=100,
    )
    fields.update(overrides)
    return RunManifest(**fields)


def unit_rows(k: int, d: int, generator=None) -> np.ndarray:
    g = generator if generator is not None else np.random.default_rng(0)
    E = g.normal(size=(k, d))
    return E / np.linalg.norm(E, axis=1, keepdims=True)


def write_run(
    directory,
    manifest: RunManifest,
    texts_by_prompt: dict[str, list[str]],
    labels_by_prompt: dict[str, list[bool]] | None = None,
    verdict_rows: list[dict] | None = None,
    meta_by_prompt: dict[str, list[dict]] | None = None,
) -> Path:
    """Lay out a run directory the CLI can consume."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    with open(directory / "generations.jsonl", "w", encoding="utf-8") as f:
        for prompt_id, texts in texts_by_prompt.items():
            for i, text in enumerate(texts):
                rec = {
                    "task": manifest.task_id,
                    "model": manifest.model_id,
                    "prompt_id": prompt_id,
                    "sample_index": i,
                    "text": text,
                }
                if meta_by_prompt is not None:
                    rec["meta"] = meta_by_prompt[prompt_id][i]
                f.write(json.dumps(rec) + "\n")
    if labels_by_prompt is not None:
        with open(directory / "labels.jsonl", "w", encoding="utf-8") as f:
            for prompt_id, flags in labels_by_prompt.items():
                for i, flag in enumerate(flags):
                    f.write(
                        json.dumps(
                            {"prompt_id": prompt_id, "sample_index": i, "correct": bool(flag)}
                        )
                        + "\n"
                    )
    if verdict_rows is not None:
        with open(directory / "verdicts.jsonl", "w", encoding="utf-8") as f:
            for row in verdict_rows:
                f.write(json.dumps(row) + "\n")
    return directory
