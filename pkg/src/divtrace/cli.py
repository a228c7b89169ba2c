"""Command-line front end.

Operates on a run directory produced by a sampling harness:

    run/
      manifest.json         how the K samples per prompt were drawn
      generations.jsonl     the sampled outputs
      labels.jsonl          per-sample correctness (optional)
      verdicts.jsonl        pairwise judge outcomes (optional)
      embeddings/*.emb1     precomputed embedding rows (optional)
      cache/                scorer response cache
      reports/              everything this tool writes

Exit codes: 2 for input problems, 3 for scorer problems, 1 for anything
else.
"""
from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import analysis, codemetrics, decontam, divmetrics, gateway, quality, report
from .corpus import RunManifest, STAGES, group_by_prompt, ingest_generations
from .errors import (
    DivtraceError,
    InputError,
    ScorerError,
)

EXIT_INPUT = 2
EXIT_SCORER = 3
EXIT_INTERNAL = 1

KNOWN_METRICS = ("ead", "cosine", "vendi", "nli", "ast")


@dataclass
class Settings:
    run_dir: Path | None
    strict: bool
    jobs: int
    scorer_endpoint: str | None
    embeddings_files: tuple[str, ...]
    metrics: tuple[str, ...]
    seed: int

    def require_run_dir(self) -> Path:
        if self.run_dir is None:
            raise InputError("this command needs --run-dir")
        if not self.run_dir.is_dir():
            raise InputError(f"run directory does not exist: {self.run_dir}")
        return self.run_dir

    def reports_dir(self) -> Path:
        d = self.require_run_dir() / "reports"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def config_block(self) -> dict:
        return {
            "strict": self.strict,
            "jobs": self.jobs,
            "scorer_endpoint": self.scorer_endpoint,
            "embeddings_files": sorted(self.embeddings_files),
            "metrics": list(self.metrics),
            "seed": self.seed,
        }


def _read_lines(path: Path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as f:
            return f.readlines()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e


def _load_run(settings: Settings):
    run_dir = settings.require_run_dir()
    manifest = RunManifest.load(run_dir / "manifest.json") if (
        run_dir / "manifest.json"
    ).exists() else None
    if manifest is None:
        raise InputError(f"no manifest.json in {run_dir}")
    issues: list[str] = []
    records = ingest_generations(
        _read_lines(run_dir / "generations.jsonl"), manifest, strict=settings.strict, issues=issues
    )
    groups = group_by_prompt(records, manifest, strict=settings.strict, issues=issues)
    return manifest, groups, issues


def _load_labels(settings: Settings, manifest: RunManifest):
    path = settings.require_run_dir() / "labels.jsonl"
    if not path.exists():
        return None
    issues: list[str] = []
    labels = quality.read_labels(_read_lines(path), manifest, strict=settings.strict, issues=issues)
    return quality.labels_by_prompt(labels)


def _embedding_matrices(settings: Settings, manifest: RunManifest, groups, model_tag: str):
    """Map prompt_id to a K x d matrix, from files when available and the
    scorer endpoint otherwise."""
    run_dir = settings.require_run_dir()
    paths = [Path(p) for p in settings.embeddings_files]
    if not paths:
        emb_dir = run_dir / "embeddings"
        if emb_dir.is_dir():
            paths = sorted(emb_dir.glob("*.emb1"))
    if paths:
        store = gateway.EmbeddingStore.from_paths(paths)
        return {g.prompt_id: store.matrix_for_group(g) for g in groups}, {
            "source": "files",
            "files": [str(p) for p in paths],
            "max_norm_deviation": store.max_norm_deviation,
        }
    if settings.scorer_endpoint is None:
        raise InputError(
            "no embedding source: provide --embeddings-file, an embeddings/ directory, "
            "or --scorer-endpoint"
        )
    config = gateway.ScorerConfig(
        endpoint=settings.scorer_endpoint,
        model_tag=model_tag,
        max_in_flight=settings.jobs,
        cache_dir=str(run_dir / "cache"),
    )
    client = gateway.HttpScorerClient(config)
    texts: list[str] = []
    for g in groups:
        texts.extend(g.answer_texts)
    rows = client.embed(texts)
    matrices = {}
    offset = 0
    for g in groups:
        matrices[g.prompt_id] = rows[offset : offset + g.k].astype(np.float64)
        offset += g.k
    return matrices, {"source": "endpoint", "model_tag": model_tag, "stats": dict(client.stats)}


def _nli_scorer(settings: Settings, groups, nli_model_tag: str):
    """Prefetch every aligned sentence pair in one batched pass, then
    serve the per-pair calls from the prefetched table."""
    if settings.scorer_endpoint is None:
        raise InputError("the nli metric needs --scorer-endpoint")
    run_dir = settings.require_run_dir()
    config = gateway.ScorerConfig(
        endpoint=settings.scorer_endpoint,
        nli_model_tag=nli_model_tag,
        max_in_flight=settings.jobs,
        cache_dir=str(run_dir / "cache"),
    )
    client = gateway.HttpScorerClient(config)
    pairs: list[tuple[str, str]] = []
    for g in groups:
        sentences = [divmetrics.sentence_split(t) for t in g.answer_texts]
        for i in range(len(sentences)):
            for j in range(i + 1, len(sentences)):
                m = min(len(sentences[i]), len(sentences[j]))
                for t in range(m):
                    pairs.append((sentences[i][t], sentences[j][t]))
                    pairs.append((sentences[j][t], sentences[i][t]))
    table: dict[tuple[str, str], tuple[float, float, float]] = {}
    if pairs:
        rows = client.nli(pairs)
        for pair, row in zip(pairs, rows):
            table[pair] = (float(row[0]), float(row[1]), float(row[2]))

    def scorer(premise: str, hypothesis: str):
        hit = table.get((premise, hypothesis))
        if hit is not None:
            return hit
        row = client.nli([(premise, hypothesis)])[0]
        return (float(row[0]), float(row[1]), float(row[2]))

    return scorer, client


@click.group()
@click.option("--run-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Run directory (manifest.json + generations.jsonl).")
@click.option("--strict/--lenient", default=False,
              help="Fail on malformed records instead of skipping them.")
@click.option("--jobs", type=int, default=4, show_default=True,
              help="Maximum in-flight scorer requests.")
@click.option("--scorer-endpoint", default=None, help="Base URL of an embedding/NLI scorer.")
@click.option("--embeddings-file", "embeddings_files", multiple=True,
              type=click.Path(dir_okay=False), help="Precomputed embedding file (repeatable).")
@click.option("--metrics", default="ead,cosine,vendi", show_default=True,
              help="Comma-separated diversity metrics (ead, cosine, vendi, nli).")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed recorded in report metadata and used for any sampling.")
@click.pass_context
def cli(ctx, run_dir, strict, jobs, scorer_endpoint, embeddings_files, metrics, seed):
    """Measure output-diversity collapse across post-training stages."""
    names = tuple(m.strip() for m in metrics.split(",") if m.strip())
    unknown = [m for m in names if m not in KNOWN_METRICS]
    if unknown:
        raise InputError(f"unknown metric(s) {unknown}; choose from {list(KNOWN_METRICS)}")
    if jobs < 1:
        raise InputError(f"--jobs must be >= 1, got {jobs}")
    ctx.obj = Settings(
        run_dir=run_dir,
        strict=strict,
        jobs=jobs,
        scorer_endpoint=scorer_endpoint,
        embeddings_files=embeddings_files,
        metrics=names,
        seed=seed,
    )


@cli.command()
@click.pass_obj
def ingest(settings: Settings):
    """Validate and summarize a run directory."""
    manifest, groups, issues = _load_run(settings)
    truncated = sum(1 for g in groups for s in g.samples if s.truncated_think)
    empty = sum(g.empty_answer_count() for g in groups)
    summary = {
        "task": manifest.task_id,
        "model": manifest.model_id,
        "stage": manifest.stage,
        "k": manifest.k,
        "groups": len(groups),
        "samples": sum(g.k for g in groups),
        "truncated_think": truncated,
        "empty_answers": empty,
        "issues": issues,
    }
    report.write_json(settings.reports_dir() / "ingest_summary.json", summary)
    click.echo(
        f"{manifest.task_id}/{manifest.model_id}: {len(groups)} prompt groups of k={manifest.k}, "
        f"{truncated} truncated thinks, {empty} empty answers, {len(issues)} issues"
    )


@cli.command()
@click.option("--model-tag", default=gateway.DEFAULT_TEXT_EMBEDDER, show_default=True,
              help="Embedding model the scorer should use.")
@click.option("--nli-model-tag", default=gateway.DEFAULT_NLI_MODEL, show_default=True,
              help="Entailment model the scorer should use.")
@click.pass_obj
def diversity(settings: Settings, model_tag, nli_model_tag):
    """Per-prompt and per-task diversity metrics."""
    manifest, groups, issues = _load_run(settings)
    if not groups:
        raise InputError("no complete prompt groups to score")
    want = set(settings.metrics)

    matrices = None
    emb_meta = None
    if want & {"cosine", "vendi"}:
        matrices, emb_meta = _embedding_matrices(settings, manifest, groups, model_tag)
    nli_scorer = None
    nli_client = None
    if "nli" in want:
        nli_scorer, nli_client = _nli_scorer(settings, groups, nli_model_tag)
    labels = None
    if "ast" in want:
        labels = _load_labels(settings, manifest)
        if labels is None:
            raise InputError("the ast metric scores correct samples only; labels.jsonl is required")

    rows = []
    for g in groups:
        row: dict = {
            "task": g.task_id,
            "model": g.model_id,
            "stage": manifest.stage,
            "prompt_id": g.prompt_id,
            "k": g.k,
            "empty_answers": g.empty_answer_count(),
        }
        if "ead" in want:
            try:
                score = divmetrics.ead(divmetrics.tokenize_group(g), manifest.tokenizer_vocab_size)
                row["ead"] = score.value
                row["ead_per_n"] = list(score.per_n)
            except DivtraceError:
                pass
        if matrices is not None:
            E = matrices[g.prompt_id]
            if "cosine" in want:
                row["cosine"] = divmetrics.cosine_diversity(E)
            if "vendi" in want:
                row["vendi"] = divmetrics.vendi(E)
        if nli_scorer is not None:
            value = divmetrics.nli_diversity(g, nli_scorer)
            if value is not None:
                row["nli"] = value
        if labels is not None:
            per_prompt = labels.get(g.prompt_id, {})
            correct = {i: lab.correct for i, lab in per_prompt.items()}
            value = codemetrics.code_group_diversity(g, correct)
            if value is not None:
                row["ast"] = value
        rows.append(row)

    reports = settings.reports_dir()
    report.write_jsonl(reports / "diversity_per_prompt.jsonl", rows)

    def mean_of(key):
        vals = [r[key] for r in rows if key in r]
        return float(np.mean(vals)) if vals else None

    summary_header = ["task", "model", "stage", "n_prompts"]
    summary_row = [manifest.task_id, manifest.model_id, manifest.stage, len(rows)]
    for m in KNOWN_METRICS:
        if m in want:
            summary_header += [m, f"n_{m}_undefined"]
            summary_row += [mean_of(m), sum(1 for r in rows if m not in r)]
    report.write_csv(reports / "diversity_summary.csv", summary_header, [summary_row])

    meta = report.run_metadata("diversity", settings.config_block())
    if emb_meta is not None:
        meta["embeddings"] = emb_meta
    if nli_client is not None:
        meta["nli"] = {"model_tag": nli_model_tag, "stats": dict(nli_client.stats)}
    meta["issues"] = issues
    report.write_json(reports / "diversity_meta.json", meta)
    shown = ", ".join(
        f"{m}={mean_of(m):.4f}" for m in KNOWN_METRICS if m in want and mean_of(m) is not None
    )
    click.echo(f"{manifest.task_id}/{manifest.model_id}: {len(rows)} prompts; {shown}")


@cli.command("quality")
@click.option("--task-kind", type=click.Choice(quality.TASK_KINDS), default="math",
              show_default=True)
@click.option("--ks", default="1,16", show_default=True,
              help="Comma-separated k values for pass@k.")
@click.option("--gold", type=click.Path(dir_okay=False), default=None,
              help="JSONL of {prompt_id, answer} reference answers.")
@click.option("--judge-raw", type=float, default=None,
              help="Raw 1-10 judge score to recenter and include.")
@click.pass_obj
def quality_cmd(settings: Settings, task_kind, ks, gold, judge_raw):
    """Correctness-based quality: greedy accuracy, majority vote, pass@k."""
    manifest, groups, issues = _load_run(settings)
    labels = _load_labels(settings, manifest)
    run_dir = settings.require_run_dir()

    summary = None
    if labels is not None and groups:
        try:
            k_list = sorted({int(k) for k in ks.split(",") if k.strip()})
        except ValueError as e:
            raise InputError(f"bad --ks value: {ks!r}") from e
        gold_map = None
        if gold is not None:
            gold_map = {}
            for line in _read_lines(Path(gold)):
                if line.strip():
                    obj = json.loads(line)
                    gold_map[str(obj["prompt_id"])] = str(obj["answer"])
        summary = quality.summarize_quality(
            groups, labels, manifest, task_kind=task_kind, ks=k_list, gold=gold_map
        )

    rate = None
    verdicts_path = run_dir / "verdicts.jsonl"
    if verdicts_path.exists():
        verdicts = quality.read_verdicts(
            _read_lines(verdicts_path), strict=settings.strict, issues=issues
        )
        rate = quality.win_rate(verdicts, strict=settings.strict, issues=issues)

    recentered = quality.wb_score(judge_raw) if judge_raw is not None else None
    if summary is None and rate is None and recentered is None:
        raise InputError("nothing to score: no labels.jsonl, verdicts.jsonl, or --judge-raw")

    header = ["task", "model", "stage", "n_prompts", "acc_at_1", "mv_at_k"]
    row: list = [manifest.task_id, manifest.model_id, manifest.stage, len(groups)]
    if summary is not None:
        row += [summary.acc_at_1, summary.mv_at_k]
        for k in sorted(summary.pass_at_k):
            header.append(f"pass_at_{k}")
            row.append(summary.pass_at_k[k])
        header.append("consistency")
        row.append(summary.consistency)
    else:
        row += [None, None]
    header += ["win_rate", "judge_score"]
    row += [rate, recentered]

    reports = settings.reports_dir()
    report.write_csv(reports / "quality_summary.csv", header, [row])
    meta = report.run_metadata(
        "quality",
        settings.config_block(),
        {"task_kind": task_kind, "ks": ks, "issues": issues},
    )
    report.write_json(reports / "quality_meta.json", meta)
    click.echo(", ".join(f"{h}={report.fmt(v)}" for h, v in zip(header, row) if v is not None))


@cli.command()
@click.option("--model-tag", default=gateway.DEFAULT_TEXT_EMBEDDER, show_default=True)
@click.option("--baseline", type=click.Path(dir_okay=False), default=None,
              help="qfd_task.csv of the base model, for the genuine-drop fraction.")
@click.pass_obj
def qfd(settings: Settings, model_tag, baseline):
    """Quality-filtered diversity: all-sample vs correct-only spread."""
    manifest, groups, issues = _load_run(settings)
    labels = _load_labels(settings, manifest)
    if labels is None:
        raise InputError("qfd needs labels.jsonl in the run directory")
    if not groups:
        raise InputError("no complete prompt groups to score")
    matrices, emb_meta = _embedding_matrices(settings, manifest, groups, model_tag)

    records = []
    rows = []
    for g in groups:
        per_prompt = labels.get(g.prompt_id)
        if per_prompt is None or len(per_prompt) != g.k:
            raise InputError(f"prompt {g.prompt_id!r}: labels do not cover all {g.k} samples")
        mask = quality.correct_mask(per_prompt, g.k)
        rec = analysis.qfd(g, mask, matrices[g.prompt_id])
        records.append(rec)
        row = {
            "prompt_id": g.prompt_id,
            "k_correct": rec.k_correct,
            "d_all": rec.d_all,
            "vendi_all": rec.vendi_all,
        }
        if rec.d_correct is not None:
            row["d_correct"] = rec.d_correct
            row["vendi_correct"] = rec.vendi_correct
        rows.append(row)

    agg = analysis.aggregate_qfd(records)
    reports = settings.reports_dir()
    report.write_jsonl(reports / "qfd_per_prompt.jsonl", rows)

    header = [
        "task", "model", "stage", "n_prompts", "d_all", "d_correct",
        "vendi_all", "vendi_correct", "n_conditioned_undefined",
    ]
    out_row = [
        manifest.task_id, manifest.model_id, manifest.stage, agg.n_prompts,
        agg.d_all, agg.d_correct, agg.vendi_all, agg.vendi_correct,
        agg.n_conditioned_undefined,
    ]
    if baseline is not None:
        base_rows = list(csv.DictReader(_read_lines(Path(baseline))))
        match = [r for r in base_rows if r["task"] == manifest.task_id]
        if not match:
            raise InputError(f"baseline {baseline} has no row for task {manifest.task_id!r}")
        b = match[0]
        base_rec = analysis.TaskQfd(
            d_all=float(b["d_all"]),
            vendi_all=float(b["vendi_all"]),
            d_correct=float(b["d_correct"]) if b["d_correct"] else None,
            vendi_correct=float(b["vendi_correct"]) if b["vendi_correct"] else None,
            n_prompts=int(b["n_prompts"]),
            n_conditioned_undefined=int(b["n_conditioned_undefined"]),
        )
        header.append("genuine_fraction")
        out_row.append(analysis.genuine_fraction(base_rec, agg))
    report.write_csv(reports / "qfd_task.csv", header, [out_row])
    meta = report.run_metadata("qfd", settings.config_block(), {"issues": issues})
    meta["embeddings"] = emb_meta
    report.write_json(reports / "qfd_meta.json", meta)
    click.echo(
        f"{manifest.task_id}/{manifest.model_id}: d_all={agg.d_all:.4f}"
        + (f", d_correct={agg.d_correct:.4f}" if agg.d_correct is not None else "")
        + f", {agg.n_conditioned_undefined} prompts under 2 correct"
    )


@cli.command()
@click.option("--series", type=click.Path(dir_okay=False), required=True,
              help="CSV with columns task, lineage, stage, value.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Output CSV (default <run-dir>/reports/stage_attribution.csv).")
@click.pass_obj
def attribute(settings: Settings, series, out):
    """Attribute a task-level metric's change to post-training stages."""
    rows = list(csv.DictReader(_read_lines(Path(series))))
    if not rows:
        raise InputError(f"{series}: empty series file")
    needed = {"task", "lineage", "stage", "value"}
    if not needed.issubset(rows[0].keys()):
        raise InputError(f"{series}: need columns {sorted(needed)}, got {sorted(rows[0].keys())}")

    by_key: dict[tuple[str, str], list[tuple[str, float]]] = {}
    for r in rows:
        try:
            by_key.setdefault((r["lineage"], r["task"]), []).append(
                (r["stage"], float(r["value"]))
            )
        except ValueError as e:
            raise InputError(f"{series}: bad value {r['value']!r} for task {r['task']!r}") from e

    attributions: dict[tuple[str, str], analysis.StageAttribution] = {}
    stages_seen: list[str] = []
    for (lineage, task), stage_values in sorted(by_key.items()):
        ordered = sorted(stage_values, key=lambda sv: STAGES.index(sv[0]) if sv[0] in STAGES else -1)
        att = analysis.stage_loss(analysis.StageSeries(task_id=task, stages=tuple(ordered)))
        attributions[(lineage, task)] = att
        for stage, _ in att.deltas:
            if stage not in stages_seen:
                stages_seen.append(stage)

    header = ["lineage", "task"] + [f"delta_{s}" for s in stages_seen] + ["retained"]
    out_rows = []
    for lineage in sorted({k[0] for k in attributions}):
        tasks = [k[1] for k in sorted(attributions) if k[0] == lineage]
        delta_sums = {s: [] for s in stages_seen}
        retained_all = []
        for task in tasks:
            att = attributions[(lineage, task)]
            deltas = dict(att.deltas)
            out_rows.append(
                [lineage, task]
                + [deltas.get(s) for s in stages_seen]
                + [att.retained]
            )
            for s in stages_seen:
                if s in deltas:
                    delta_sums[s].append(deltas[s])
            retained_all.append(att.retained)
        if len(tasks) > 1:
            out_rows.append(
                [lineage, "average"]
                + [float(np.mean(delta_sums[s])) if delta_sums[s] else None for s in stages_seen]
                + [float(np.mean(retained_all))]
            )

    if out is None:
        out = settings.reports_dir() / "stage_attribution.csv"
    report.write_csv(out, header, out_rows)
    click.echo(f"wrote {out}: {len(out_rows)} rows over {len(stages_seen)} stages")


@cli.command("mv-gain")
@click.option("--table", type=click.Path(dir_okay=False), required=True,
              help="CSV with columns label, acc_at_1, mv_at_k.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Output CSV (default <run-dir>/reports/mv_gain.csv).")
@click.pass_obj
def mv_gain_cmd(settings: Settings, table, out):
    """Majority-vote gain over greedy decoding, per labeled row."""
    rows = list(csv.DictReader(_read_lines(Path(table))))
    if not rows:
        raise InputError(f"{table}: empty table")
    out_rows = []
    for r in rows:
        try:
            summary = quality.QualitySummary(
                acc_at_1=float(r["acc_at_1"]), mv_at_k=float(r["mv_at_k"])
            )
        except (KeyError, ValueError) as e:
            raise InputError(f"{table}: bad row {r!r}: {e}") from e
        out_rows.append(
            [r["label"], summary.acc_at_1, summary.mv_at_k, analysis.mv_gain(summary)]
        )
    if out is None:
        out = settings.reports_dir() / "mv_gain.csv"
    report.write_csv(out, ["label", "acc_at_1", "mv_at_k", "gain"], out_rows)
    click.echo(f"wrote {out}: {len(out_rows)} rows")


def _iter_documents(path: Path):
    if path.suffix == ".jsonl":
        for line in _read_lines(path):
            if line.strip():
                obj = json.loads(line)
                yield str(obj.get("prompt_id", "")), str(obj["text"])
    else:
        for i, line in enumerate(_read_lines(path)):
            if line.strip():
                yield str(i), line.rstrip("\n")


@cli.command("decontam-index")
@click.option("--corpus", "corpora", multiple=True, required=True,
              type=click.Path(dir_okay=False),
              help="Corpus file: JSONL with a text field, or one document per line.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory to write the index into.")
@click.option("--n", default=decontam.DEFAULT_N, show_default=True,
              help="Window length in tokens.")
@click.option("--shard-bits", default=4, show_default=True)
@click.pass_obj
def decontam_index(settings: Settings, corpora, out, n, shard_bits):
    """Build a fingerprint index over training corpora."""
    index = decontam.NgramIndex(n=n, shard_bits=shard_bits)
    for corpus_path in corpora:
        for _, text in _iter_documents(Path(corpus_path)):
            index.add_document(text)
    index.freeze()
    index.save(out)
    click.echo(
        f"indexed {index.doc_count} documents, {index.window_count} windows, "
        f"{index.fingerprint_count} distinct fingerprints -> {out}"
    )


@cli.command("decontam-scan")
@click.option("--index", "indexes", multiple=True, required=True,
              help="name=directory of a built index (repeatable).")
@click.option("--testset", "testsets", multiple=True, required=True,
              help="name=path of an evaluation set (repeatable).")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Where to write reports (default <run-dir>/reports).")
@click.pass_obj
def decontam_scan(settings: Settings, indexes, testsets, out_dir):
    """Score evaluation sets against one or more corpus indexes."""

    def parse_named(specs, what):
        named = []
        for spec in specs:
            name, sep, path = spec.partition("=")
            if not sep:
                name, path = Path(spec).name, spec
            named.append((name, Path(path)))
        if len({n for n, _ in named}) != len(named):
            raise InputError(f"duplicate {what} names in {specs}")
        return named

    index_specs = parse_named(indexes, "index")
    testset_specs = parse_named(testsets, "testset")
    loaded = [(name, decontam.NgramIndex.load(path)) for name, path in index_specs]

    out_dir = Path(out_dir) if out_dir is not None else settings.reports_dir()
    per_instance = []
    matrix = []
    for ts_name, ts_path in testset_specs:
        docs = list(_iter_documents(ts_path))
        if not docs:
            raise InputError(f"{ts_path}: empty evaluation set")
        row = []
        for idx_name, index in loaded:
            fractions = []
            for doc_id, text in docs:
                cov = decontam.coverage(
                    text, index, prompt_id=doc_id, tokenizer_tag=decontam.TOKENIZER_TAG
                )
                fractions.append(cov.coverage)
                per_instance.append(
                    {
                        "testset": ts_name,
                        "index": idx_name,
                        "prompt_id": cov.prompt_id,
                        "covered": cov.covered,
                        "total": cov.total,
                        "coverage": cov.coverage,
                    }
                )
            row.append(100.0 * float(np.mean(fractions)))
        matrix.append(row)

    report.write_jsonl(out_dir / "decontam_per_instance.jsonl", per_instance)
    header = ["testset"] + [name for name, _ in index_specs]
    rows = [[ts_name] + matrix[i] for i, (ts_name, _) in enumerate(testset_specs)]
    report.write_csv(out_dir / "decontam_matrix.csv", header, rows)
    click.echo(f"wrote {out_dir / 'decontam_matrix.csv'}: {len(rows)} testsets x {len(loaded)} indexes")


@cli.command("report")
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Render PNG figures next to the delimited reports.")
@click.pass_obj
def report_cmd(settings: Settings, figures):
    """Render figures from the delimited reports in the run directory."""
    reports = settings.reports_dir()
    fig_dir = reports / "figures"
    rendered: list[str] = []

    def rows_of(name):
        path = reports / name
        if not path.exists():
            return None
        return list(csv.DictReader(_read_lines(path)))

    diversity_rows = rows_of("diversity_summary.csv")
    if figures and diversity_rows:
        for metric in ("ead", "cosine", "vendi", "nli"):
            values = {
                f"{r['task']}/{r['model']}": float(r[metric])
                for r in diversity_rows
                if r.get(metric)
            }
            if values:
                out = fig_dir / f"diversity_{metric}.png"
                report.fig_metric_by_task(values, f"{metric} diversity", metric, out)
                rendered.append(str(out))

    attribution_rows = rows_of("stage_attribution.csv")
    if figures and attribution_rows:
        stages = [c[len("delta_"):] for c in attribution_rows[0] if c.startswith("delta_")]
        for lineage in sorted({r["lineage"] for r in attribution_rows}):
            chart_rows = [
                (r["task"], {s: float(r[f"delta_{s}"]) for s in stages if r.get(f"delta_{s}")})
                for r in attribution_rows
                if r["lineage"] == lineage
            ]
            out = fig_dir / f"stage_deltas_{lineage}.png"
            report.fig_stage_deltas(chart_rows, stages, out)
            rendered.append(str(out))

    gain_rows = rows_of("mv_gain.csv")
    if figures and gain_rows:
        points = [
            (r["label"], float(r["acc_at_1"]), float(r["mv_at_k"])) for r in gain_rows
        ]
        out = fig_dir / "mv_gain.png"
        report.fig_quality_vs_diversity(points, "greedy accuracy", "majority-vote accuracy", out)
        rendered.append(str(out))

    qfd_rows = rows_of("qfd_task.csv")
    if figures and qfd_rows:
        values = {}
        for r in qfd_rows:
            values[f"{r['task']}/{r['model']} all"] = float(r["d_all"])
            if r.get("d_correct"):
                values[f"{r['task']}/{r['model']} correct"] = float(r["d_correct"])
        out = fig_dir / "qfd.png"
        report.fig_metric_by_task(values, "diversity before/after correctness filter", "cosine diversity", out)
        rendered.append(str(out))

    matrix_rows = rows_of("decontam_matrix.csv")
    if figures and matrix_rows:
        corpora = [c for c in matrix_rows[0] if c != "testset"]
        tasks = [r["testset"] for r in matrix_rows]
        grid = [[float(r[c]) for c in corpora] for r in matrix_rows]
        out = fig_dir / "decontam_matrix.png"
        report.fig_coverage_matrix(tasks, corpora, grid, out)
        rendered.append(str(out))

    if not rendered and figures:
        raise InputError(f"no delimited reports found under {reports}")
    report.write_json(reports / "report_index.json", {"figures": sorted(rendered)})
    for path in rendered:
        click.echo(path)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.UsageError as e:
        e.show()
        return EXIT_INPUT
    except click.ClickException as e:
        e.show()
        return EXIT_INTERNAL
    except click.exceptions.Abort:
        return EXIT_INTERNAL
    except InputError as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_INPUT
    except ScorerError as e:
        click.echo(f"scorer error: {e}", err=True)
        return EXIT_SCORER
    except DivtraceError as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_INTERNAL
    except Exception as e:  # noqa: BLE001 - the CLI boundary maps everything
        click.echo(f"internal error: {type(e).__name__}: {e}", err=True)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
