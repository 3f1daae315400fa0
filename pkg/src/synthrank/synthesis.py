"""Bottom-up training data synthesis.

For each seed query: ground a persona, expand into a daily-life query and an
expert query, solve each expansion step by step, extract the materials the
solution relies on, derive hard-negative descriptions from them, and write
one passage per description.
"""

from __future__ import annotations

import json
import logging
import random
import re
import threading
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from . import prompts
from .errors import (
    DegenerateSolution,
    EmptyGeneration,
    EndpointUnknown,
    JsonShapeError,
    ParseError,
    RangeViolation,
    ScriptMiss,
    SynthRankError,
)
from .gateway import ChatExchange, ChatRequest, Gateway
from .records import LabeledPair, PairSource, Passage, PassageRole, Persona, Query, QueryKind

logger = logging.getLogger(__name__)

GENERATION_STAGES = ("persona", "daily", "expert", "solve", "extract", "negatives", "passage")


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class MaterialDesc:
    index: int
    text: str
    polarity: Polarity = Polarity.POSITIVE

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("material index is 1-based")
        if not self.text.strip():
            raise ValueError("material description must be non-empty")


@dataclass
class StageBinding:
    endpoint: str
    temperature: float = 0.7
    max_tokens: int = 2048
    retries: int = 1


@dataclass
class StageConfig:
    bindings: dict[str, StageBinding]
    materials_min: int = 3
    materials_max: int = 7
    negatives_min: int = 1
    negatives_max: int = 5
    solution_floor: int = 50
    persona_samples: int = 3
    workers: int = 1

    def __post_init__(self) -> None:
        # bounds may narrow the prompt contracts but never widen them
        if not 3 <= self.materials_min <= self.materials_max <= 7:
            raise ValueError("material bounds must lie within 3-7")
        if not 1 <= self.negatives_min <= self.negatives_max <= 5:
            raise ValueError("negative bounds must lie within 1-5")
        missing = [s for s in GENERATION_STAGES if s not in self.bindings]
        if missing:
            raise ValueError(f"no endpoint bound for stages {missing}")

    @classmethod
    def single_endpoint(cls, endpoint: str, **kwargs: Any) -> StageConfig:
        return cls({s: StageBinding(endpoint) for s in GENERATION_STAGES}, **kwargs)


_NUMBERED = re.compile(r"^\s*(\d{1,2})\s*[.)]\s+(.*\S)\s*$")
_FENCED_JSON = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def parse_numbered_list(text: str, stage: str) -> list[str]:
    items = []
    for line in text.splitlines():
        m = _NUMBERED.match(line)
        if m:
            item = m.group(2).strip()
            if item.startswith("[") and item.endswith("]"):
                item = item[1:-1].strip()
            if item:
                items.append(item)
    if not items:
        raise ParseError(stage)
    return items


def parse_json_object(text: str, stage: str, keys: Sequence[str]) -> dict[str, str]:
    m = _FENCED_JSON.search(text)
    if m:
        blob = m.group(1)
    else:
        start, end = text.find("{"), text.rfind("}")
        if start < 0 or end <= start:
            raise JsonShapeError(stage, "no JSON object in reply")
        blob = text[start:end + 1]
    try:
        obj = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise JsonShapeError(stage, f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise JsonShapeError(stage, "reply is not a JSON object")
    for key in keys:
        value = obj.get(key)
        if not isinstance(value, str) or not value.strip():
            raise JsonShapeError(stage, f"missing or empty key {key!r}")
    return {k: obj[k].strip() for k in keys}


def format_descriptions(descs: Sequence[MaterialDesc]) -> str:
    return "\n" + "\n".join(f"{d.index}. {d.text}" for d in descs)


@dataclass
class SeedFailure:
    seed_id: str
    stage: str
    error: str


@dataclass
class SynthesisReport:
    seeds_total: int = 0
    seeds_failed: int = 0
    pairs: int = 0
    failures: list[SeedFailure] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seeds_total": self.seeds_total,
            "seeds_ok": self.seeds_total - self.seeds_failed,
            "seeds_failed": self.seeds_failed,
            "pairs": self.pairs,
            "failures": [vars(f) for f in self.failures],
        }


@dataclass
class SynthesisResult:
    pairs: list[LabeledPair]
    report: SynthesisReport
    transcript: list[ChatExchange]


class Synthesizer:
    def __init__(self, gateway: Gateway, config: StageConfig, persona_pool: Sequence[Persona] = ()) -> None:
        self.gateway = gateway
        self.config = config
        self.persona_pool = list(persona_pool)
        self._current = threading.local()

    def _ask(self, stage: str, prompt: str) -> ChatExchange:
        b = self.config.bindings[stage]
        self._current.stage = stage
        return self.gateway.chat(
            ChatRequest(endpoint_id=b.endpoint, user=prompt, stage=stage, temperature=b.temperature, max_tokens=b.max_tokens)
        )

    def _text(self, stage: str, prompt: str) -> str:
        text = self._ask(stage, prompt).final_text.strip()
        if not text:
            raise EmptyGeneration(stage)
        return text

    def sample_personas(self, seed_query: Query, rng: random.Random) -> list[Persona]:
        if not self.persona_pool:
            raise SynthRankError("persona pool is empty")
        return rng.sample(self.persona_pool, min(self.config.persona_samples, len(self.persona_pool)))

    def ground_persona(self, seed_query: Query, persona_samples: Sequence[Persona]) -> Persona:
        examples = "\n".join(f"{i}. {p.description}" for i, p in enumerate(persona_samples, 1))
        prompt = prompts.render("persona", FILL_QUERY_HERE=seed_query.text, FILL_EXAMPLES_HERE=examples)
        return Persona(id=f"{seed_query.id}-persona", description=self._text("persona", prompt))

    def expand_daily(self, seed_query: Query, persona: Persona) -> Query:
        prompt = prompts.render("daily", FILL_QUERY_HERE=seed_query.text, FILL_PERSONA_HERE=persona.description)
        obj = parse_json_object(self._text("daily", prompt), "daily", ("query", "scenario"))
        return Query(
            id=f"{seed_query.id}-daily",
            text=obj["query"],
            kind=QueryKind.DAILY,
            scenario=obj["scenario"],
            persona_id=persona.id,
        )

    def expand_expert(self, seed_query: Query) -> Query:
        prompt = prompts.render("expert", FILL_QUERY_HERE=seed_query.text)
        return Query(id=f"{seed_query.id}-expert", text=self._text("expert", prompt), kind=QueryKind.EXPERT)

    def solve_cot(self, query: Query) -> str:
        prompt = prompts.render("solve", FILL_QUERY_HERE=query.full_text)
        floor = self.config.solution_floor
        for _ in range(self.config.bindings["solve"].retries + 1):
            text = self._text("solve", prompt)
            if len(text) >= floor:
                return text
            logger.info("degenerate solution for %s (%d chars), retrying", query.id, len(text))
        raise DegenerateSolution(len(text), floor)

    def _bounded_list(self, stage: str, prompt: str, lo: int, hi: int) -> list[str]:
        attempts = self.config.bindings[stage].retries + 1
        for attempt in range(1, attempts + 1):
            try:
                items = parse_numbered_list(self._text(stage, prompt), stage)
                if not lo <= len(items) <= hi:
                    raise RangeViolation(stage, len(items), lo, hi)
                return items
            except (RangeViolation, ParseError) as exc:
                if attempt == attempts:
                    raise
                logger.info("%s: %s, retrying", stage, exc)
        raise AssertionError("unreachable")

    def extract_materials(self, solution: str) -> list[MaterialDesc]:
        if not solution.strip():
            raise ValueError("solution must be non-empty")
        prompt = prompts.render("extract", FILL_PASSAGE_HERE=solution)
        items = self._bounded_list("extract", prompt, self.config.materials_min, self.config.materials_max)
        return [MaterialDesc(i, t, Polarity.POSITIVE) for i, t in enumerate(items, 1)]

    def gen_negative_descs(self, query: Query, positive_descs: Sequence[MaterialDesc]) -> list[MaterialDesc]:
        if not positive_descs:
            raise ValueError("need at least one positive description")
        prompt = prompts.render(
            "negatives",
            FILL_QUERY_HERE=query.full_text,
            POSITIVE_PASSAGE_DESCRIPTIONS_HERE=format_descriptions(positive_descs),
        )
        items = self._bounded_list("negatives", prompt, self.config.negatives_min, self.config.negatives_max)
        return [MaterialDesc(i, t, Polarity.NEGATIVE) for i, t in enumerate(items, 1)]

    def gen_passage(self, desc: MaterialDesc, passage_id: str | None = None) -> Passage:
        prompt = prompts.render("passage", FILL_MATERIAL_DESCRIPTION=desc.text)
        role = PassageRole.POSITIVE if desc.polarity is Polarity.POSITIVE else PassageRole.HARD_NEGATIVE
        if passage_id is None:
            passage_id = f"{'p' if role is PassageRole.POSITIVE else 'n'}{desc.index}"
        return Passage(id=passage_id, text=self._text("passage", prompt), role=role, material_desc=desc.text)

    def _expansion_pairs(self, query: Query) -> list[LabeledPair]:
        solution = self.solve_cot(query)
        positives = self.extract_materials(solution)
        negatives = self.gen_negative_descs(query, positives)
        pairs = []
        for desc in [*positives, *negatives]:
            tag = "p" if desc.polarity is Polarity.POSITIVE else "n"
            passage = self.gen_passage(desc, f"{query.id}-{tag}{desc.index}")
            pairs.append(LabeledPair(query, passage, desc.polarity is Polarity.POSITIVE, PairSource.SYNTHESIZED))
        return pairs

    def synthesize_one(self, index: int, seed_query: Query, seed: int) -> list[LabeledPair]:
        rng = random.Random(f"{seed}:{index}:{seed_query.id}")
        persona = self.ground_persona(seed_query, self.sample_personas(seed_query, rng))
        daily = self.expand_daily(seed_query, persona)
        expert = self.expand_expert(seed_query)
        return self._expansion_pairs(daily) + self._expansion_pairs(expert)

    def _run_seed(self, item: tuple[int, Query, int]) -> tuple[list[LabeledPair], list[ChatExchange], SeedFailure | None]:
        index, seed_query, seed = item
        with self.gateway.recording() as rec:
            try:
                return self.synthesize_one(index, seed_query, seed), list(rec), None
            except (ScriptMiss, EndpointUnknown):
                raise
            except SynthRankError as exc:
                stage = getattr(exc, "stage", "") or getattr(self._current, "stage", "")
                logger.warning("seed %s failed at %s: %s", seed_query.id, stage, exc)
                return [], list(rec), SeedFailure(seed_query.id, stage, str(exc))

    def synthesize(self, seed_queries: Sequence[Query], seed: int = 0) -> SynthesisResult:
        items = [(i, q, seed) for i, q in enumerate(seed_queries)]
        if self.config.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.config.workers) as pool:
                outcomes = list(pool.map(self._run_seed, items))
        else:
            outcomes = [self._run_seed(it) for it in items]

        report = SynthesisReport(seeds_total=len(items))
        pairs: list[LabeledPair] = []
        transcript: list[ChatExchange] = []
        for seed_pairs, exchanges, failure in outcomes:
            transcript.extend(exchanges)
            if failure is not None:
                report.seeds_failed += 1
                report.failures.append(failure)
            pairs.extend(seed_pairs)
        report.pairs = len(pairs)
        return SynthesisResult(pairs, report, transcript)
