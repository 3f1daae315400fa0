"""End-to-end commands. Each validates the config first and writes under ``run_dir/<command>``."""

from __future__ import annotations

import dataclasses
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .bm25 import InvertedIndex, build_index, retrieve
from .config import PipelineConfig
from .dataset import (
    AblationVariant,
    ablation_split,
    build_training_set,
    emit_sft_records,
    summarize,
)
from .errors import ConfigError, PreconditionError
from .gateway import ChatExchange, transcript_lines
from .judging import Judge, filter_pairs
from .metrics import MetricReport, evaluate_run, p_mrr, p_mrr_per_query, parse_metric, write_reports
from .rag import evaluate_rag
from .records import (
    Document,
    LabeledPair,
    McQuestion,
    PairSource,
    Persona,
    Query,
    read_jsonl,
    read_qrels,
    read_run,
    write_jsonl,
    write_run,
)
from .rerank import PassThroughReranker, PointwiseReranker, RerankerLike, RerankReport
from .synthesis import Synthesizer

logger = logging.getLogger(__name__)

INDEX_FILE = "bm25.idx"
MODES = ("retrieve_only", "rerank")


@dataclass
class CommandResult:
    out_dir: Path
    files: dict[str, Path] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)
    table: str = ""


def _out_dir(config: PipelineConfig, *parts: str) -> Path:
    d = config.run_dir.joinpath(*parts)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(obj: Any, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def _write_transcript(exchanges: Sequence[ChatExchange], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(transcript_lines(exchanges))


def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise PreconditionError(f"{what} {p} not found")
    return p


# -- synthesize ---------------------------------------------------------------


def cmd_synthesize(config: PipelineConfig, seed_queries_path: str | Path) -> CommandResult:
    stage_config = config.stage_config()
    config.require_stages("judge")
    if not config.synthesis.persona_pool:
        raise ConfigError("synthesis.persona_pool is required for synthesize")
    seeds = read_jsonl(_require_file(seed_queries_path, "seed query file"), Query)
    personas = read_jsonl(_require_file(config.resolve(config.synthesis.persona_pool), "persona pool"), Persona)

    gateway = config.gateway()
    try:
        result = Synthesizer(gateway, stage_config, personas).synthesize(seeds, config.seed)
        judge_settings = config.stages["judge"]
        judge = Judge(
            gateway,
            judge_settings.endpoint,
            temperature=config.temperature("judge"),
            max_tokens=judge_settings.max_tokens,
            workers=config.synthesis.judge_workers,
        )
        verdicts, judge_transcript = judge.judge_all(result.pairs)
    finally:
        gateway.close()
    kept, filter_report = filter_pairs(result.pairs, verdicts)

    out = _out_dir(config, "synthesize")
    res = CommandResult(out)
    res.files = {
        "candidates": out / "candidates.jsonl",
        "pairs": out / "pairs.jsonl",
        "verdicts": out / "verdicts.jsonl",
        "filter_report": out / "filter_report.json",
        "synthesis_report": out / "synthesis_report.json",
        "transcript": out / "transcript.jsonl",
    }
    write_jsonl(result.pairs, res.files["candidates"])
    write_jsonl(kept, res.files["pairs"])
    write_jsonl([dataclasses.asdict(v) for v in verdicts], res.files["verdicts"])
    _write_json(filter_report.to_dict(), res.files["filter_report"])
    _write_json(result.report.to_dict(), res.files["synthesis_report"])
    _write_transcript(result.transcript + judge_transcript, res.files["transcript"])
    res.summary = {"synthesis": result.report.to_dict(), "filter": filter_report.to_dict()}
    res.table = filter_report.table()
    return res


# -- build --------------------------------------------------------------------


def _load_pool(path: str | Path, source: PairSource, what: str) -> list[LabeledPair]:
    pairs = read_jsonl(_require_file(path, what), LabeledPair)
    relabelled = [p if p.source is source else dataclasses.replace(p, source=source) for p in pairs]
    changed = sum(a is not b for a, b in zip(pairs, relabelled))
    if changed:
        logger.warning("%s: %d records re-tagged as %s", what, changed, source.value)
    return relabelled


def cmd_build(
    config: PipelineConfig,
    seed_pool_path: str | Path,
    synth_pairs_path: str | Path,
    ablation: AblationVariant | str = AblationVariant.FULL,
) -> CommandResult:
    variant = AblationVariant(ablation)
    seed_pool = _load_pool(seed_pool_path, PairSource.SEED_POOL, "seed pool")
    synth_pool = ablation_split(_load_pool(synth_pairs_path, PairSource.SYNTHESIZED, "synthesized pairs"), variant)
    pairs = build_training_set(seed_pool, synth_pool, config.mix_spec())

    out = _out_dir(config, "build")
    stem = "sft" if variant is AblationVariant.FULL else f"sft_{variant.value}"
    res = CommandResult(out)
    res.files = {
        "sft": out / f"{stem}.jsonl",
        "manifest": out / f"{stem}.manifest.yaml",
        "summary": out / f"{stem}.summary.json",
    }
    emit_sft_records(pairs, res.files["sft"], config.mix.require_traces, config.mix.system_prompt)
    config.train_manifest(res.files["sft"].name).write(res.files["manifest"])
    summary = summarize(pairs).to_dict()
    summary["ablation"] = variant.value
    _write_json(summary, res.files["summary"])
    res.summary = summary
    return res


# -- index --------------------------------------------------------------------


def _load_corpus(path: str | Path) -> list[Document]:
    return read_jsonl(_require_file(path, "corpus"), Document)


def cmd_index(config: PipelineConfig, corpus_path: str | Path) -> CommandResult:
    index = build_index(_load_corpus(corpus_path), config.bm25_params(), config.stopwords())
    out = _out_dir(config, "index")
    res = CommandResult(out, {"index": out / INDEX_FILE})
    index.save(res.files["index"])
    res.summary = {"doc_count": index.stats.doc_count, "terms": len(index.stats.doc_freq), "avg_doc_len": index.stats.avg_doc_len}
    return res


def _index_for(config: PipelineConfig, docs: Sequence[Document], index_path: str | Path | None) -> InvertedIndex:
    if index_path is not None:
        index = InvertedIndex.load(_require_file(index_path, "index"))
        missing = [d.id for d in docs if d.id not in index]
        if missing or len(index) != len(docs):
            raise PreconditionError(f"index {index_path} does not match the corpus ({len(index)} vs {len(docs)} docs)")
        return index
    return build_index(docs, config.bm25_params(), config.stopwords())


def _reranker(config: PipelineConfig, gateway: Any) -> PointwiseReranker:
    config.require_stages("rerank")
    r = config.rerank
    assert r is not None
    return PointwiseReranker(
        gateway,
        r.endpoint,
        method=r.method,
        temperature=config.temperature("rerank"),
        max_tokens=r.max_tokens,
        logprob_top_k=r.logprob_top_k,
        workers=r.workers,
    )


# -- evaluate -----------------------------------------------------------------


def _paired_reports(config: PipelineConfig, og_path: Path, new_path: Path, qrels_path: Path, out: Path) -> CommandResult:
    qrels = read_qrels(qrels_path)
    og, new = read_run(og_path), read_run(new_path)
    reports = [
        evaluate_run(runs, qrels, m) for m in config.evaluation.paired_metrics for runs in (og, new)
    ]
    for r, label in zip(reports, ["og", "new"] * len(config.evaluation.paired_metrics)):
        r.metric = f"{label}_{r.metric}"
    per_query = {q: 100.0 * v for q, v in p_mrr_per_query(og, new, qrels).items()}
    reports.append(MetricReport("p-mrr", None, per_query))
    res = CommandResult(out, {"metrics": out / "metrics.json", "per_query": out / "per_query.csv"})
    res.table = write_reports(reports, res.files["metrics"], res.files["per_query"])
    res.summary = {r.name: r.mean for r in reports}
    res.summary["p-mrr"] = p_mrr(og, new, qrels)
    return res


def cmd_evaluate(
    config: PipelineConfig,
    qrels_path: str | Path,
    corpus_path: str | Path | None = None,
    queries_path: str | Path | None = None,
    mode: str = "retrieve_only",
    index_path: str | Path | None = None,
    og_run: str | Path | None = None,
    new_run: str | Path | None = None,
) -> CommandResult:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
    for m in config.evaluation.metrics + config.evaluation.paired_metrics:
        try:
            parse_metric(m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if (og_run is None) != (new_run is None):
        raise PreconditionError("--og-run and --new-run must be given together")
    if (corpus_path is None) != (queries_path is None):
        raise PreconditionError("--corpus and --queries must be given together")
    if corpus_path is None and og_run is None:
        raise PreconditionError("nothing to evaluate: give --corpus/--queries or --og-run/--new-run")
    if mode == "rerank":
        config.require_stages("rerank")
    qrels_file = _require_file(qrels_path, "qrels")

    result = CommandResult(_out_dir(config, "evaluate"))
    if og_run is not None:
        paired = _paired_reports(
            config, _require_file(og_run, "og run"), _require_file(new_run, "new run"), qrels_file, _out_dir(config, "evaluate", "paired")
        )
        result.files.update({f"paired_{k}": v for k, v in paired.files.items()})
        result.summary["paired"] = paired.summary
        result.table = paired.table
    if corpus_path is None:
        return result

    docs = _load_corpus(corpus_path)
    queries = read_jsonl(_require_file(queries_path, "queries"), Query)
    qrels = read_qrels(qrels_file)
    index = _index_for(config, docs, index_path)
    k = config.retrieval.k
    runs = [retrieve(q, index, k) for q in queries]

    out = _out_dir(config, "evaluate", mode)
    files = {"run": out / "run.trec", "metrics": out / "metrics.json", "per_query": out / "per_query.csv"}
    if mode == "rerank":
        doc_texts = {d.id: d.text for d in docs}
        gateway = config.gateway()
        reranker = _reranker(config, gateway)
        assert config.rerank is not None
        total = RerankReport()
        try:
            reranked = []
            for q, r in zip(queries, runs):
                ranking, rep = reranker.rerank_with_report(q, r, doc_texts, config.rerank.k_in)
                reranked.append(ranking)
                total.add(rep)
        finally:
            gateway.close()
        runs = reranked
        files["sidecar"] = out / "rerank_traces.jsonl"
        files["transcript"] = out / "transcript.jsonl"
        write_jsonl(total.sidecar, files["sidecar"])
        _write_transcript(total.transcript, files["transcript"])
        result.summary["rerank"] = total.counts()
    write_run(runs, files["run"])
    reports = [evaluate_run(runs, qrels, m) for m in config.evaluation.metrics]
    table = write_reports(reports, files["metrics"], files["per_query"])
    result.files.update(files)
    result.summary.update({r.name: r.mean for r in reports})
    result.table = "\n\n".join(t for t in (result.table, table) if t)
    return result


# -- rag ----------------------------------------------------------------------


def cmd_rag(
    config: PipelineConfig,
    corpus_path: str | Path,
    questions_path: str | Path,
    preset_name: str | None = None,
    mode: str = "rerank",
) -> CommandResult:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
    rag_config = config.rag_config(preset_name)
    if mode == "rerank":
        config.require_stages("rerank")
    docs = _load_corpus(corpus_path)
    questions = read_jsonl(_require_file(questions_path, "questions"), McQuestion)
    index = build_index(docs, config.bm25_params(), config.stopwords())
    gateway = config.gateway()
    reranker: RerankerLike = _reranker(config, gateway) if mode == "rerank" else PassThroughReranker()
    try:
        outcome = evaluate_rag(questions, index, {d.id: d.text for d in docs}, reranker, gateway, rag_config, config.rag.workers)
    finally:
        gateway.close()

    out = _out_dir(config, "rag", mode)
    res = CommandResult(out, {"results": out / "results.jsonl", "summary": out / "summary.json", "transcript": out / "transcript.jsonl"})
    write_jsonl([a.to_dict() for a in outcome.answers], res.files["results"])
    summary = {**outcome.summary, "preset": preset_name or config.rag.preset, "mode": mode}
    _write_json(summary, res.files["summary"])
    _write_transcript(outcome.transcript, res.files["transcript"])
    res.summary = summary
    res.table = f"accuracy {outcome.accuracy:.4f} ({outcome.correct}/{len(outcome.answers)}, abstained {outcome.abstained})"
    return res
