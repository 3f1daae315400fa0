"""Relevance judging and label-agreement filtering of synthesized pairs."""

from __future__ import annotations

import logging
import re
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any

from . import prompts
from .errors import AlignmentError, NoVerdict, UnterminatedTrace
from .gateway import ChatExchange, ChatRequest, Gateway, split_reasoning
from .records import LabeledPair

logger = logging.getLogger(__name__)

_VERDICT_TOKEN = re.compile(r"\b(true|false)\b", re.IGNORECASE)


def judge_prompt(query_text: str, passage_text: str) -> str:
    return prompts.render("judge", FILL_QUERY_HERE=query_text, FILL_PASSAGE_HERE=passage_text)


def parse_verdict(final_text: str) -> bool:
    """Last standalone "true"/"false" token, case-insensitive."""
    hits = _VERDICT_TOKEN.findall(final_text)
    if not hits:
        raise NoVerdict(f"no true/false token in {final_text[:80]!r}")
    return hits[-1].lower() == "true"


def verdict_from_raw(raw_text: str) -> tuple[str | None, bool]:
    """Split off a think block, then parse the verdict from what follows it."""
    try:
        trace, final = split_reasoning(raw_text)
    except UnterminatedTrace:
        raise NoVerdict("unterminated reasoning trace") from None
    return trace, parse_verdict(final)


@dataclass(frozen=True)
class JudgeVerdict:
    pair_id: str
    raw_text: str
    label: bool | None
    trace: str | None = None

    @property
    def parsed(self) -> bool:
        return self.label is not None


@dataclass
class FilterReport:
    total: int = 0
    kept: int = 0
    dropped_mismatch: int = 0
    dropped_unparseable: int = 0

    @property
    def retention(self) -> float:
        return self.kept / self.total if self.total else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "kept": self.kept,
            "dropped_mismatch": self.dropped_mismatch,
            "dropped_unparseable": self.dropped_unparseable,
            "retention": self.retention,
        }

    def table(self) -> str:
        rows = [(k, str(v) if isinstance(v, int) else f"{v:.4f}") for k, v in self.to_dict().items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>8}" for k, v in rows)


class Judge:
    def __init__(self, gateway: Gateway, endpoint: str, temperature: float = 0.0, max_tokens: int = 4096, workers: int = 1):
        self.gateway = gateway
        self.endpoint = endpoint
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.workers = workers

    def judge(self, pair: LabeledPair) -> JudgeVerdict:
        ex = self.gateway.chat(
            ChatRequest(
                endpoint_id=self.endpoint,
                user=judge_prompt(pair.query.full_text, pair.passage.text),
                stage="judge",
                temperature=self.temperature,
                max_tokens=self.max_tokens,
            )
        )
        return verdict_from_exchange(pair.pair_id, ex)

    def _judge_recorded(self, pair: LabeledPair) -> tuple[JudgeVerdict, list[ChatExchange]]:
        with self.gateway.recording() as rec:
            return self.judge(pair), list(rec)

    def judge_all(self, pairs: Sequence[LabeledPair]) -> tuple[list[JudgeVerdict], list[ChatExchange]]:
        if self.workers > 1 and len(pairs) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                outcomes = list(pool.map(self._judge_recorded, pairs))
        else:
            outcomes = [self._judge_recorded(p) for p in pairs]
        return [v for v, _ in outcomes], [e for _, ex in outcomes for e in ex]


def verdict_from_exchange(pair_id: str, ex: ChatExchange) -> JudgeVerdict:
    try:
        label: bool | None = parse_verdict(ex.final_text)
    except NoVerdict:
        logger.info("unparseable verdict for %s", pair_id)
        label = None
    return JudgeVerdict(pair_id=pair_id, raw_text=ex.raw_text, label=label, trace=ex.reasoning_trace)


def filter_pairs(pairs: Sequence[LabeledPair], verdicts: Sequence[JudgeVerdict]) -> tuple[list[LabeledPair], FilterReport]:
    """Keep pairs whose verdict agrees with the intended label, in input order."""
    if len(pairs) != len(verdicts):
        raise AlignmentError(f"{len(pairs)} pairs but {len(verdicts)} verdicts")
    report = FilterReport(total=len(pairs))
    kept = []
    for pair, verdict in zip(pairs, verdicts):
        if pair.pair_id != verdict.pair_id:
            raise AlignmentError(f"verdict for {verdict.pair_id!r} aligned with pair {pair.pair_id!r}")
        if verdict.label is None:
            report.dropped_unparseable += 1
        elif verdict.label != pair.intended_label:
            report.dropped_mismatch += 1
        else:
            kept.append(replace(pair, judge_verdict=verdict.label, reasoning_trace=verdict.trace))
            report.kept += 1
    return kept, report
