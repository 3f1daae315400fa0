"""Retrieve, rerank, read: multiple-choice QA over a retrieval corpus."""

from __future__ import annotations

import logging
import re
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

from . import prompts
from .bm25 import InvertedIndex, retrieve
from .errors import EmptyDataset, NoChoice, ScriptMiss, SynthRankError
from .gateway import ChatExchange, ChatRequest, Gateway
from .metrics import MetricReport
from .records import McQuestion, Query, QueryKind
from .rerank import RerankerLike

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RagConfig:
    retrieve_k: int = 100
    rerank_k: int = 100
    context_k: int = 3
    reader_endpoint: str = "reader"
    reader_temperature: float = 0.0
    reader_max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not 1 <= self.context_k <= self.rerank_k <= self.retrieve_k:
            raise ValueError("need 1 <= context_k <= rerank_k <= retrieve_k")


RAG_PRESETS = {
    "main": {"retrieve_k": 100, "rerank_k": 100, "context_k": 3},
    "appendix": {"retrieve_k": 100, "rerank_k": 20, "context_k": 3},
}


def preset(name: str, **overrides: Any) -> RagConfig:
    if name not in RAG_PRESETS:
        raise ValueError(f"unknown RAG preset {name!r}; choose from {sorted(RAG_PRESETS)}")
    return RagConfig(**{**RAG_PRESETS[name], **overrides})


def reader_prompt(question: McQuestion, contexts: Sequence[str]) -> str:
    blocks = "\n\n".join(f"[{i}] {c}" for i, c in enumerate(contexts, 1)) or "(none)"
    options = "\n".join(f"{letter}. {text}" for letter, text in question.options)
    return prompts.render("reader", FILL_CONTEXTS_HERE=blocks, FILL_QUESTION_HERE=question.stem, FILL_OPTIONS_HERE=options)


def extract_choice(reader_text: str, options: Sequence[tuple[str, str]]) -> str:
    """Answer letter by precedence: explicit "answer is X"/"Answer: X", last bare letter, unique option text."""
    letters = [l for l, _ in options]
    alt = "|".join(re.escape(l) for l in sorted(letters, key=len, reverse=True))
    explicit = re.findall(rf"(?i:answer)(?:\s+(?i:is))?\s*[:：]?\s*\(?\**({alt})(?![\w'])", reader_text)
    if explicit:
        return explicit[-1]
    bare = re.findall(rf"(?<![\w'])\(?({alt})\)?(?![\w'])", reader_text)
    if bare:
        return bare[-1]
    lowered = reader_text.lower()
    found = [l for l, t in options if t.strip() and t.strip().lower() in lowered]
    if len(found) == 1:
        return found[0]
    raise NoChoice(f"no option letter found in {reader_text[:80]!r}")


@dataclass
class RagAnswer:
    question_id: str
    letter: str | None
    context_ids: list[str]
    reader_text: str
    trace: str | None
    abstained: bool = False
    correct: bool = False
    exchanges: list[ChatExchange] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        d = dict(vars(self))
        del d["exchanges"]
        return d


def rag_answer(
    question: McQuestion,
    index: InvertedIndex,
    doc_texts: Mapping[str, str],
    reranker: RerankerLike,
    gateway: Gateway,
    config: RagConfig,
) -> RagAnswer:
    query = Query(id=question.id, text=question.stem, kind=QueryKind.SEED)
    candidates = retrieve(query, index, config.retrieve_k)
    reranked, report = reranker.rerank_with_report(query, candidates, doc_texts, config.rerank_k)
    context_ids = reranked.doc_ids[: config.context_k]
    prompt = reader_prompt(question, [doc_texts[d] for d in context_ids])
    exchanges = list(report.transcript)
    try:
        with gateway.recording() as rec:
            ex = gateway.chat(
                ChatRequest(
                    endpoint_id=config.reader_endpoint,
                    user=prompt,
                    stage="reader",
                    temperature=config.reader_temperature,
                    max_tokens=config.reader_max_tokens,
                )
            )
    except ScriptMiss:
        raise
    except SynthRankError as exc:
        logger.warning("reader failed on %s: %s", question.id, exc)
        return RagAnswer(question.id, None, context_ids, "", None, abstained=True, exchanges=exchanges)
    exchanges += rec
    try:
        letter: str | None = extract_choice(ex.final_text, question.options)
    except NoChoice:
        letter = None
    return RagAnswer(
        question.id,
        letter,
        context_ids,
        ex.raw_text,
        ex.reasoning_trace,
        abstained=letter is None,
        correct=letter == question.gold,
        exchanges=exchanges,
    )


@dataclass
class RagResult:
    report: MetricReport
    answers: list[RagAnswer]
    abstained: int = 0
    correct: int = 0
    incorrect: int = 0
    summary: dict[str, Any] = field(default_factory=dict)

    @property
    def transcript(self) -> list[ChatExchange]:
        return [e for a in self.answers for e in a.exchanges]

    @property
    def accuracy(self) -> float:
        return self.report.mean


def evaluate_rag(
    questions: Sequence[McQuestion],
    index: InvertedIndex,
    doc_texts: Mapping[str, str],
    reranker: RerankerLike,
    gateway: Gateway,
    config: RagConfig,
    workers: int = 1,
) -> RagResult:
    if not questions:
        raise EmptyDataset("no questions to evaluate")

    def one(q: McQuestion) -> RagAnswer:
        return rag_answer(q, index, doc_texts, reranker, gateway, config)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            answers = list(pool.map(one, questions))
    else:
        answers = [one(q) for q in questions]
    report = MetricReport("accuracy", None, {a.question_id: 1.0 if a.correct else 0.0 for a in answers})
    correct = sum(a.correct for a in answers)
    abstained = sum(a.abstained for a in answers)
    result = RagResult(report, answers, abstained, correct, len(answers) - correct - abstained)
    result.summary = {
        "accuracy": report.mean,
        "total": len(answers),
        "correct": correct,
        "incorrect": result.incorrect,
        "abstained": abstained,
        "config": vars(config),
    }
    return result
