"""Pointwise LLM reranking with the true/false relevance prompt."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol

from .errors import NoVerdict, ScriptMiss, SynthRankError
from .gateway import ChatExchange, ChatRequest, Gateway
from .judging import judge_prompt, parse_verdict
from .records import Query, Ranking

logger = logging.getLogger(__name__)


class ScoreMethod(str, Enum):
    LOGPROB = "logprob"
    TEXT_BINARY = "text_binary"


@dataclass(frozen=True)
class RelevanceScore:
    value: float
    method: ScoreMethod
    trace: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"relevance {self.value} outside [0, 1]")
        if self.method is ScoreMethod.TEXT_BINARY and self.value not in (0.0, 1.0):
            raise ValueError("binary scores must be 0 or 1")


def _verdict_logprob(logprobs: Mapping[str, float], word: str) -> float | None:
    hits = [lp for tok, lp in logprobs.items() if tok.strip().lower() == word]
    return max(hits) if hits else None


def two_way_softmax(lp_true: float, lp_false: float) -> float:
    """P(true) renormalised over the pair {true, false}."""
    if lp_true == -math.inf and lp_false == -math.inf:
        return 0.5
    diff = lp_false - lp_true
    if diff > 0:
        e = math.exp(-diff)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(diff))


def score_exchange(ex: ChatExchange, use_logprobs: bool = True) -> RelevanceScore:
    """Score from first-answer-token logprobs when present, else from the verdict text."""
    if use_logprobs and ex.first_token_logprobs:
        lt = _verdict_logprob(ex.first_token_logprobs, "true")
        lf = _verdict_logprob(ex.first_token_logprobs, "false")
        if lt is not None or lf is not None:
            value = two_way_softmax(-math.inf if lt is None else lt, -math.inf if lf is None else lf)
            return RelevanceScore(value, ScoreMethod.LOGPROB, ex.reasoning_trace)
    # verdict sought only after the trace; final_text already excludes it
    label = parse_verdict(ex.final_text)
    return RelevanceScore(1.0 if label else 0.0, ScoreMethod.TEXT_BINARY, ex.reasoning_trace)


class RerankerLike(Protocol):
    def rerank(self, query: Query, candidates: Ranking, doc_texts: Mapping[str, str], k_in: int = 100) -> Ranking: ...

    def rerank_with_report(
        self, query: Query, candidates: Ranking, doc_texts: Mapping[str, str], k_in: int = 100
    ) -> tuple[Ranking, RerankReport]: ...


class PassThroughReranker:
    """Keeps the first-stage order; the retrieve-only baseline."""

    tag = "passthrough"

    def rerank(self, query: Query, candidates: Ranking, doc_texts: Mapping[str, str], k_in: int = 100) -> Ranking:
        return candidates

    def rerank_with_report(
        self, query: Query, candidates: Ranking, doc_texts: Mapping[str, str], k_in: int = 100
    ) -> tuple[Ranking, RerankReport]:
        return candidates, RerankReport(unscored_tail=len(candidates))


@dataclass
class RerankReport:
    scored: int = 0
    failed: int = 0
    no_verdict: int = 0
    unscored_tail: int = 0
    sidecar: list[dict[str, Any]] = field(default_factory=list)
    transcript: list[ChatExchange] = field(default_factory=list)

    def add(self, other: RerankReport) -> None:
        self.scored += other.scored
        self.failed += other.failed
        self.no_verdict += other.no_verdict
        self.unscored_tail += other.unscored_tail
        self.sidecar.extend(other.sidecar)
        self.transcript.extend(other.transcript)

    def counts(self) -> dict[str, int]:
        return {"scored": self.scored, "failed": self.failed, "no_verdict": self.no_verdict, "unscored_tail": self.unscored_tail}


class PointwiseReranker:
    def __init__(
        self,
        gateway: Gateway,
        endpoint: str,
        method: str = "auto",
        temperature: float = 0.0,
        max_tokens: int = 4096,
        logprob_top_k: int = 5,
        workers: int = 1,
    ) -> None:
        if method not in ("auto", "logprob", "text"):
            raise ValueError(f"unknown scoring method {method!r}")
        self.gateway = gateway
        self.endpoint = endpoint
        self.method = method
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.logprob_top_k = logprob_top_k
        self.workers = workers
        self.last_report = RerankReport()

    @property
    def tag(self) -> str:
        spec = self.gateway.endpoints.get(self.endpoint)
        model = (spec.model if spec and spec.model else self.endpoint).replace("/", "_")
        return "".join(c if not c.isspace() else "_" for c in f"{model}-{self.method}")

    def _request(self, query: Query, text: str) -> ChatRequest:
        return ChatRequest(
            endpoint_id=self.endpoint,
            user=judge_prompt(query.full_text, text),
            stage="rerank",
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            want_logprobs=self.method != "text",
            logprob_top_k=self.logprob_top_k,
        )

    def relevance_score(self, query: Query, passage: Any) -> RelevanceScore:
        """``passage`` is anything with a ``text`` attribute, or a plain string."""
        text = passage if isinstance(passage, str) else passage.text
        ex = self.gateway.chat(self._request(query, text))
        return score_exchange(ex, use_logprobs=self.method != "text")

    def _score_one(self, args: tuple[Query, str, str]) -> tuple[RelevanceScore | None, str, list[ChatExchange]]:
        query, doc_id, text = args
        # recorded per candidate so the transcript order does not depend on thread scheduling
        with self.gateway.recording() as rec:
            try:
                return self.relevance_score(query, text), "ok", list(rec)
            except NoVerdict:
                return None, "no_verdict", list(rec)
            except ScriptMiss:
                raise
            except SynthRankError as exc:
                logger.warning("rerank %s/%s failed: %s", query.id, doc_id, exc)
                return None, "failed", list(rec)

    def rerank(self, query: Query, candidates: Ranking, doc_texts: Mapping[str, str], k_in: int = 100) -> Ranking:
        ranking, self.last_report = self.rerank_with_report(query, candidates, doc_texts, k_in)
        return ranking

    def rerank_with_report(
        self, query: Query, candidates: Ranking, doc_texts: Mapping[str, str], k_in: int = 100
    ) -> tuple[Ranking, RerankReport]:
        prefix = candidates.entries[:k_in]
        tail = candidates.entries[k_in:]
        jobs = [(query, d, doc_texts[d]) for d, _ in prefix]
        if self.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                results = list(pool.map(self._score_one, jobs))
        else:
            results = [self._score_one(j) for j in jobs]

        report = RerankReport(unscored_tail=len(tail))
        keyed = []
        for rank, ((doc_id, _), (score, status, exchanges)) in enumerate(zip(prefix, results), 1):
            report.transcript.extend(exchanges)
            value = score.value if score else 0.0
            if score is None:
                report.failed += status == "failed"
                report.no_verdict += status == "no_verdict"
            else:
                report.scored += 1
            # failures sink below genuine zero scores; equal scores keep first-stage order
            keyed.append((-value, score is None, rank, doc_id, value))
            report.sidecar.append(
                {
                    "query_id": query.id,
                    "doc_id": doc_id,
                    "first_stage_rank": rank,
                    "score": value,
                    "method": score.method.value if score else None,
                    "status": status,
                    "trace": score.trace if score else None,
                }
            )
        keyed.sort()
        entries = [(doc_id, value) for *_, doc_id, value in keyed]
        entries += [(doc_id, 0.0) for doc_id, _ in tail]
        return Ranking(query.id, tuple(entries), self.tag), report
