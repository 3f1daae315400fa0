"""Rank metrics (nDCG, MAP, Recall, MRR), paired-instruction p-MRR, and accuracy."""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import MissingQuery
from .records import QRels, Ranking


def ndcg_at_k(ranking: Ranking, qrels: QRels, k: int) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    qid = ranking.query_id
    dcg = sum(qrels.grade(qid, d) / math.log2(i + 1) for i, d in enumerate(ranking.doc_ids[:k], 1))
    ideal = sorted((g for g in qrels.for_query(qid).values() if g > 0), reverse=True)[:k]
    idcg = sum(g / math.log2(i + 1) for i, g in enumerate(ideal, 1))
    return dcg / idcg if idcg > 0 else 0.0


def map_at_k(ranking: Ranking, qrels: QRels, k: int) -> float:
    """Average precision truncated at k, normalised by min(#relevant, k)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    relevant = qrels.relevant(ranking.query_id)
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for i, d in enumerate(ranking.doc_ids[:k], 1):
        if d in relevant:
            hits += 1
            total += hits / i
    return total / min(len(relevant), k)


def recall_at_k(ranking: Ranking, qrels: QRels, k: int) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    relevant = qrels.relevant(ranking.query_id)
    if not relevant:
        return 0.0
    return len(relevant.intersection(ranking.doc_ids[:k])) / len(relevant)


def mrr(ranking: Ranking, qrels: QRels) -> float:
    relevant = qrels.relevant(ranking.query_id)
    for i, d in enumerate(ranking.doc_ids, 1):
        if d in relevant:
            return 1.0 / i
    return 0.0


def paired_rank_delta(rank_og: int, rank_new: int) -> float:
    if rank_og > rank_new:
        return rank_og / rank_new - 1.0
    return 1.0 - rank_new / rank_og


def _rank_or_last(r: Ranking, doc_id: str) -> int:
    rank = r.rank_of(doc_id)
    return rank if rank is not None else len(r) + 1


def p_mrr_per_query(og_runs: Sequence[Ranking], new_runs: Sequence[Ranking], qrels: QRels) -> dict[str, float]:
    og = {r.query_id: r for r in og_runs}
    new = {r.query_id: r for r in new_runs}
    if set(og) != set(new):
        missing = sorted(set(og) ^ set(new))
        raise MissingQuery(f"queries present in only one run: {missing[:5]}")
    out = {}
    for qid in og:
        relevant = sorted(qrels.relevant(qid))
        if not relevant:
            continue
        deltas = [paired_rank_delta(_rank_or_last(og[qid], d), _rank_or_last(new[qid], d)) for d in relevant]
        out[qid] = sum(deltas) / len(deltas)
    return out


def p_mrr(og_runs: Sequence[Ranking], new_runs: Sequence[Ranking], qrels: QRels) -> float:
    """Mean paired-rank change over queries, on the x100 scale."""
    per_query = p_mrr_per_query(og_runs, new_runs, qrels)
    if not per_query:
        return 0.0
    return 100.0 * sum(per_query.values()) / len(per_query)


def choice_accuracy(predictions: Mapping[str, str | None], gold: Mapping[str, str]) -> float:
    if not gold:
        return 0.0
    return sum(1 for qid, g in gold.items() if predictions.get(qid) == g) / len(gold)


# -- reports ------------------------------------------------------------------


@dataclass
class MetricReport:
    metric: str
    k: int | None
    per_query: dict[str, float]
    excluded: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return sum(self.per_query.values()) / len(self.per_query) if self.per_query else 0.0

    @property
    def name(self) -> str:
        return f"{self.metric}@{self.k}" if self.k else self.metric

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "k": self.k,
            "mean": self.mean,
            "evaluated": len(self.per_query),
            "excluded": len(self.excluded),
            "per_query": self.per_query,
        }


RANK_METRICS: dict[str, Callable[..., float]] = {
    "ndcg": ndcg_at_k,
    "map": map_at_k,
    "recall": recall_at_k,
    "mrr": lambda r, q, k=None: mrr(r, q),
}


def parse_metric(name: str) -> tuple[str, int | None]:
    """``"ndcg@10"`` -> ("ndcg", 10); ``"mrr"`` -> ("mrr", None)."""
    base, _, k = name.lower().partition("@")
    if base not in RANK_METRICS:
        raise ValueError(f"unknown metric {name!r}")
    if base != "mrr" and not k:
        raise ValueError(f"metric {name!r} needs a cutoff, e.g. {base}@10")
    return base, int(k) if k else None


def evaluate_run(rankings: Iterable[Ranking], qrels: QRels, metric: str) -> MetricReport:
    """Per-query values; queries without any relevant judgment are excluded from the mean."""
    base, k = parse_metric(metric)
    fn = RANK_METRICS[base]
    report = MetricReport(base, k, {})
    for r in rankings:
        if not qrels.relevant(r.query_id):
            report.excluded.append(r.query_id)
            continue
        report.per_query[r.query_id] = fn(r, qrels, k)
    return report


def heterogeneous_mean(scores: Mapping[str, tuple[str, float]]) -> dict[str, Any]:
    """Average of per-dataset scores that use different metrics, labelled as such."""
    values = [v for _, v in scores.values()]
    return {
        "label": "heterogeneous mean of " + ", ".join(f"{name}:{metric}" for name, (metric, _) in scores.items()),
        "components": {name: {"metric": m, "value": v} for name, (m, v) in scores.items()},
        "mean": sum(values) / len(values) if values else 0.0,
    }


def format_table(rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> str:
    def cell(v: Any) -> str:
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) if i else v.ljust(w) for i, (v, w) in enumerate(zip(b, widths))) for b in body]
    return "\n".join(lines)


def write_reports(reports: Sequence[MetricReport], json_path: str | Path, csv_path: str | Path | None = None) -> str:
    """Write the JSON summary (and optional per-query CSV); returns the text table."""
    Path(json_path).parent.mkdir(parents=True, exist_ok=True)
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump({r.name: r.to_dict() for r in reports}, f, indent=2, sort_keys=True)
        f.write("\n")
    if csv_path is not None:
        qids = sorted({q for r in reports for q in r.per_query})
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["query_id", *(r.name for r in reports)])
            for q in qids:
                w.writerow([q, *(r.per_query.get(q, "") for r in reports)])
    rows = [{"metric": r.name, "mean": r.mean, "queries": len(r.per_query), "excluded": len(r.excluded)} for r in reports]
    return format_table(rows, ["metric", "mean", "queries", "excluded"])
