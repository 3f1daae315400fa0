"""Scripted-mock scenario builders shared by the test modules."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from synthrank.records import Document, McQuestion, Persona, QRels, Query, QueryKind, write_jsonl

KINDS = ("daily", "expert")


def seed_queries(n: int) -> list[Query]:
    return [Query(id=f"seed{i:02d}", text=f"what is going on with topic {i:02d}?", kind=QueryKind.SEED) for i in range(n)]


def personas(n: int = 6) -> list[Persona]:
    return [Persona(id=f"persona{i}", description=f"A practitioner with interest number {i}") for i in range(n)]


@dataclass
class PipelineDesign:
    """What the script intends, computed independently of the pipeline code."""

    counts: dict[tuple[str, str], tuple[int, int]] = field(default_factory=dict)
    verdicts: dict[str, bool | None] = field(default_factory=dict)  # pair_id -> judge label
    labels: dict[str, bool] = field(default_factory=dict)  # pair_id -> intended label

    @property
    def total(self) -> int:
        return len(self.labels)

    @property
    def kept(self) -> int:
        return sum(1 for pid, lab in self.labels.items() if self.verdicts[pid] == lab)

    @property
    def unparseable(self) -> int:
        return sum(1 for v in self.verdicts.values() if v is None)


def _judge_reply(pair_index: int, intended: bool, seed_index: int) -> tuple[str, bool | None]:
    # a fixed slice of pairs disagrees or rambles, so retention is known up front
    trace = f"<think>Weighing passage {pair_index} of seed {seed_index} against the query.</think>"
    if (pair_index + seed_index) % 11 == 0:
        return trace + "I am unable to decide.", None
    if (pair_index + 2 * seed_index) % 7 == 0:
        label = not intended
    else:
        label = intended
    return trace + ("true" if label else "false"), label


def pipeline_script(seeds: list[Query]) -> tuple[list[dict[str, Any]], PipelineDesign]:
    """Mock entries driving the full synthesis + judge fan-out, plus the design they encode."""
    entries: list[dict[str, Any]] = []
    design = PipelineDesign()
    for i, q in enumerate(seeds):
        sid = q.id
        entries.append({"stage": "persona", "contains": q.text, "response": f"A field researcher who studies item {sid}."})
        entries.append(
            {
                "stage": "daily",
                "contains": q.text,
                "response": "```json\n" + json.dumps({"query": f"Q-{sid}-daily: how do I deal with it?", "scenario": f"I keep running into {sid} at work."}) + "\n```",
            }
        )
        entries.append({"stage": "expert", "contains": q.text, "response": f"Q-{sid}-expert: which tradeoffs govern it?"})
        for kind in KINDS:
            # positives span 3-7 and negatives 1-5 across seeds
            n_pos = 3 + (i % 5) if kind == "daily" else 7 - (i % 5)
            n_neg = 1 + (i % 5) if kind == "daily" else 5 - (i % 5)
            design.counts[(sid, kind)] = (n_pos, n_neg)
            qtag = f"Q-{sid}-{kind}:"
            entries.append({"stage": "solve", "contains": qtag, "response": f"SOL-{sid}-{kind}: " + "a careful step " * 6})
            entries.append(
                {
                    "stage": "extract",
                    "contains": f"SOL-{sid}-{kind}:",
                    "response": "\n".join(f"{j}. MAT-{sid}-{kind}-p{j}. evidence" for j in range(1, n_pos + 1)),
                }
            )
            entries.append(
                {
                    "stage": "negatives",
                    "contains": qtag,
                    "response": "\n".join(f"{j}. [MAT-{sid}-{kind}-n{j}. near miss]" for j in range(1, n_neg + 1)),
                }
            )
            pair_index = 0
            for tag, n in (("p", n_pos), ("n", n_neg)):
                for j in range(1, n + 1):
                    mat = f"MAT-{sid}-{kind}-{tag}{j}."
                    text = f"Passage text for {mat} with supporting detail."
                    entries.append({"stage": "passage", "contains": mat, "response": text})
                    reply, label = _judge_reply(pair_index, tag == "p", i)
                    entries.append({"stage": "judge", "contains": f"Passage text for {mat}", "response": reply})
                    pid = f"{sid}-{kind}::{sid}-{kind}-{tag}{j}"
                    design.labels[pid] = tag == "p"
                    design.verdicts[pid] = label
                    pair_index += 1
    return entries, design


def write_config(
    directory: Path,
    script: list[dict[str, Any]],
    name: str = "run",
    seed: int = 7,
    extra: dict[str, Any] | None = None,
) -> Path:
    """Write a mock-backed config, script and persona pool into ``directory``."""
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "script.json").write_text(json.dumps({"script": script}), encoding="utf-8")
    write_jsonl(personas(), directory / "personas.jsonl")
    stage = {"endpoint": "mock"}
    cfg: dict[str, Any] = {
        "name": name,
        "seed": seed,
        "output_dir": "out",
        "endpoints": {"mock": {"base_url": "mock:script.json", "model": "scripted"}},
        "stages": {s: dict(stage) for s in ("persona", "daily", "expert", "solve", "extract", "negatives", "passage", "judge", "reader")},
        "rerank": {"endpoint": "mock", "method": "logprob"},
        "synthesis": {"persona_pool": "personas.jsonl"},
    }
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    path = directory / "config.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    return path


# -- reranking scenarios --------------------------------------------------------

GOOD = {"true": -0.01, "false": -5.0}
BAD = {"true": -5.0, "false": -0.01}


def oracle_rerank_entries(gold_pairs: list[tuple[str, str]]) -> list[dict[str, Any]]:
    """Rerank entries scoring the given (query text, doc text) pairs high and anything else low."""
    entries = [
        {"stage": "rerank", "contains": f"Query: {q}\nPassage: {d}", "response": {"text": "true", "logprobs": GOOD}}
        for q, d in gold_pairs
    ]
    entries.append({"stage": "rerank", "contains": "", "response": {"text": "false", "logprobs": BAD}})
    return entries


@dataclass
class RagScenario:
    docs: list[Document]
    questions: list[McQuestion]
    gold_docs: dict[str, str]  # question id -> doc holding its gold fact
    script: list[dict[str, Any]]


def rag_scenario(n_questions: int = 5, n_docs: int = 30) -> RagScenario:
    """A corpus where each question's fact sits in a lexically weak document.

    Distractors repeat the question's words so BM25 ranks them first; only a
    reranker that recognises the fact document can surface it.
    """
    letters = ["A", "B", "C", "D"]
    docs: list[Document] = []
    questions: list[McQuestion] = []
    gold_docs: dict[str, str] = {}
    script: list[dict[str, Any]] = []
    per_q = n_docs // n_questions
    for qi in range(n_questions):
        topic = f"zorblat{qi}"
        gold_letter = letters[(qi + 2) % 4]
        wrong_letter = letters[(qi + 3) % 4]
        qid = f"q{qi}"
        questions.append(
            McQuestion(
                id=qid,
                stem=f"Which property of the {topic} crystal makes it glow?",
                options=tuple((l, f"option {l.lower()} for {topic}") for l in letters),
                gold=gold_letter,
            )
        )
        gold_id = f"d{qi:02d}-gold"
        gold_docs[qid] = gold_id
        docs.append(Document(gold_id, f"GOLDFACT-{qid} measurements from a lab notebook mention {topic} once among many unrelated words about weather tides harvest fabric and travel plans."))
        for j in range(per_q - 1):
            docs.append(Document(f"d{qi:02d}-x{j}", f"The {topic} crystal glow property makes {topic} crystal glow; which property of {topic} crystal? glow {topic}."))
        script.append({"stage": "reader", "contains": f"GOLDFACT-{qid} ", "response": f"<think>The notebook settles it.</think>The answer is ({gold_letter})."})
        script.append({"stage": "reader", "contains": topic, "response": f"Answer: {wrong_letter}"})
    texts = {d.id: d.text for d in docs}
    gold_pairs = [(q.stem, texts[gold_docs[q.id]]) for q in questions]
    script = oracle_rerank_entries(gold_pairs) + script
    return RagScenario(docs, questions, gold_docs, script)


def toy_qrels(pairs: dict[str, dict[str, int]]) -> QRels:
    return QRels({(q, d): g for q, docs in pairs.items() for d, g in docs.items()})
