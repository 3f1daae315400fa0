"""Shared data model and on-disk formats (JSONL records, TREC runs and qrels)."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import DuplicateDoc, DuplicateJudgment, MalformedLine, MissingField, NonMonotoneScore


class QueryKind(str, Enum):
    SEED = "seed"
    DAILY = "daily"
    EXPERT = "expert"


class PassageRole(str, Enum):
    POSITIVE = "positive"
    HARD_NEGATIVE = "hard_negative"


class PairSource(str, Enum):
    SEED_POOL = "seed_pool"
    SYNTHESIZED = "synthesized"


def _require(d: Mapping[str, Any], name: str) -> Any:
    if name not in d or d[name] is None:
        raise MissingField(name)
    return d[name]


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    kind: QueryKind = QueryKind.SEED
    scenario: str | None = None
    persona_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", QueryKind(self.kind))
        if not self.id:
            raise ValueError("query id must be non-empty")
        if not self.text or not self.text.strip():
            raise ValueError(f"query {self.id!r} has empty text")
        if (self.kind is QueryKind.DAILY) != bool(self.scenario):
            raise ValueError(f"query {self.id!r}: scenario must be present exactly when kind is daily")

    @property
    def full_text(self) -> str:
        """Text shown to models: the scenario (daily queries only) followed by the query."""
        if self.scenario:
            return f"{self.scenario}\n{self.text}"
        return self.text

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "text": self.text, "kind": self.kind.value}
        if self.scenario is not None:
            d["scenario"] = self.scenario
        if self.persona_id is not None:
            d["persona_id"] = self.persona_id
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Query:
        return cls(
            id=str(_require(d, "id")),
            text=_require(d, "text"),
            kind=QueryKind(d.get("kind", "seed")),
            scenario=d.get("scenario"),
            persona_id=d.get("persona_id"),
        )


@dataclass(frozen=True)
class Document:
    """A retrievable corpus entry."""

    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "text": self.text}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Document:
        return cls(id=str(_require(d, "id")), text=_require(d, "text"))


@dataclass(frozen=True)
class Passage:
    id: str
    text: str
    role: PassageRole
    material_desc: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", PassageRole(self.role))
        if not self.text or not self.text.strip():
            raise ValueError(f"passage {self.id!r} has empty text")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "text": self.text, "role": self.role.value}
        if self.material_desc is not None:
            d["material_desc"] = self.material_desc
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Passage:
        return cls(
            id=str(_require(d, "id")),
            text=_require(d, "text"),
            role=PassageRole(_require(d, "role")),
            material_desc=d.get("material_desc"),
        )


@dataclass(frozen=True)
class LabeledPair:
    query: Query
    passage: Passage
    intended_label: bool
    source: PairSource = PairSource.SYNTHESIZED
    reasoning_trace: str | None = None
    judge_verdict: bool | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "source", PairSource(self.source))
        expected = self.passage.role is PassageRole.POSITIVE
        if self.intended_label != expected:
            raise ValueError(
                f"pair {self.pair_id!r}: role {self.passage.role.value} requires label {expected}"
            )

    @property
    def pair_id(self) -> str:
        return f"{self.query.id}::{self.passage.id}"

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "query": self.query.to_dict(),
            "passage": self.passage.to_dict(),
            "intended_label": self.intended_label,
            "source": self.source.value,
        }
        if self.reasoning_trace is not None:
            d["reasoning_trace"] = self.reasoning_trace
        if self.judge_verdict is not None:
            d["judge_verdict"] = self.judge_verdict
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> LabeledPair:
        label = _require(d, "intended_label")
        if not isinstance(label, bool):
            raise ValueError("intended_label must be a boolean")
        return cls(
            query=Query.from_dict(_require(d, "query")),
            passage=Passage.from_dict(_require(d, "passage")),
            intended_label=label,
            source=PairSource(d.get("source", "synthesized")),
            reasoning_trace=d.get("reasoning_trace"),
            judge_verdict=d.get("judge_verdict"),
        )


@dataclass(frozen=True)
class Persona:
    id: str
    description: str

    def __post_init__(self) -> None:
        if not self.description or not self.description.strip():
            raise ValueError(f"persona {self.id!r} has empty description")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "description": self.description}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Persona:
        # PersonaHub dumps use "persona" for the text field
        desc = d.get("description", d.get("persona"))
        if desc is None:
            raise MissingField("description")
        return cls(id=str(_require(d, "id")), description=desc)


@dataclass(frozen=True)
class McQuestion:
    id: str
    stem: str
    options: tuple[tuple[str, str], ...]
    gold: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "options", tuple((str(l), str(t)) for l, t in self.options))
        if not 2 <= len(self.options) <= 8:
            raise ValueError(f"question {self.id!r}: needs 2-8 options, got {len(self.options)}")
        letters = [l for l, _ in self.options]
        if len(set(letters)) != len(letters):
            raise ValueError(f"question {self.id!r}: repeated option letters")
        if self.gold not in letters:
            raise ValueError(f"question {self.id!r}: gold {self.gold!r} is not an option")

    @property
    def letters(self) -> list[str]:
        return [l for l, _ in self.options]

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "stem": self.stem,
            "options": [{"letter": l, "text": t} for l, t in self.options],
            "gold": self.gold,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> McQuestion:
        raw = _require(d, "options")
        if isinstance(raw, Mapping):
            options = tuple(raw.items())
        else:
            options = tuple((o["letter"], o["text"]) if isinstance(o, Mapping) else tuple(o) for o in raw)
        return cls(id=str(_require(d, "id")), stem=_require(d, "stem"), options=options, gold=_require(d, "gold"))


RECORD_TYPES: dict[str, type] = {
    "query": Query,
    "document": Document,
    "passage": Passage,
    "pair": LabeledPair,
    "persona": Persona,
    "question": McQuestion,
}


# -- JSONL ------------------------------------------------------------------


def read_jsonl(path: str | Path, schema: str | type) -> list[Any]:
    """Read one record per non-blank line, in file order.

    ``schema`` is a key of ``RECORD_TYPES`` or one of the record classes.
    """
    cls = RECORD_TYPES[schema] if isinstance(schema, str) else schema
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(str(path), line_no, line.strip(), exc.msg) from None
            if not isinstance(obj, dict):
                raise MalformedLine(str(path), line_no, line.strip(), "not a JSON object")
            try:
                records.append(cls.from_dict(obj))
            except MissingField as exc:
                raise MissingField(exc.name, line_no, str(path)) from None
            except (ValueError, TypeError, KeyError) as exc:
                raise MalformedLine(str(path), line_no, line.strip(), str(exc)) from None
    return records


def dump_jsonl_line(obj: Mapping[str, Any]) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n"


def write_jsonl(records: Iterable[Any], path: str | Path) -> int:
    """Write records (objects with ``to_dict`` or plain dicts); returns the count."""
    n = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(dump_jsonl_line(rec.to_dict() if hasattr(rec, "to_dict") else rec))
            n += 1
    return n


# -- rankings and run files -------------------------------------------------


@dataclass(frozen=True)
class Ranking:
    """Ordered candidate list for one query.

    Scores never increase down the list and doc ids are unique. Use
    :meth:`from_scores` to sort arbitrary scores with the doc-id tie rule.
    """

    query_id: str
    entries: tuple[tuple[str, float], ...]
    tag: str = "run"

    def __post_init__(self) -> None:
        entries = tuple((str(d), float(s)) for d, s in self.entries)
        object.__setattr__(self, "entries", entries)
        seen: set[str] = set()
        prev = math.inf
        for doc_id, score in entries:
            if doc_id in seen:
                raise DuplicateDoc(self.query_id, doc_id)
            if math.isnan(score) or score > prev:
                raise NonMonotoneScore(self.query_id, doc_id)
            seen.add(doc_id)
            prev = score

    @classmethod
    def from_scores(
        cls, query_id: str, scores: Mapping[str, float] | Iterable[tuple[str, float]], tag: str = "run"
    ) -> Ranking:
        items = list(scores.items()) if isinstance(scores, Mapping) else list(scores)
        items.sort(key=lambda e: (-e[1], e[0]))
        return cls(query_id, tuple(items), tag)

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def rank_of(self, doc_id: str) -> int | None:
        for i, (d, _) in enumerate(self.entries, 1):
            if d == doc_id:
                return i
        return None

    def truncated(self, k: int) -> Ranking:
        return Ranking(self.query_id, self.entries[:k], self.tag)


def _check_token(value: str, what: str) -> None:
    if not value or any(c.isspace() for c in value):
        raise ValueError(f"{what} {value!r} cannot be empty or contain whitespace in TREC files")


def write_run(rankings: Iterable[Ranking], path: str | Path) -> None:
    """Write ``<qid> Q0 <docid> <rank> <score> <tag>`` lines; ranks come from list order."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in rankings:
            _check_token(r.query_id, "query id")
            _check_token(r.tag, "run tag")
            for rank, (doc_id, score) in enumerate(r.entries, 1):
                _check_token(doc_id, "doc id")
                f.write(f"{r.query_id} Q0 {doc_id} {rank} {score:.6f} {r.tag}\n")


def read_run(path: str | Path) -> list[Ranking]:
    grouped: dict[str, list[tuple[int, str, float]]] = {}
    tags: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise MalformedLine(str(path), line_no, line.strip(), "expected 6 fields")
            qid, _, doc_id, rank, score, tag = parts
            try:
                row = (int(rank), doc_id, float(score))
            except ValueError:
                raise MalformedLine(str(path), line_no, line.strip(), "bad rank or score") from None
            grouped.setdefault(qid, []).append(row)
            tags.setdefault(qid, tag)
    rankings = []
    for qid, rows in grouped.items():
        rows.sort(key=lambda r: r[0])
        rankings.append(Ranking(qid, tuple((d, s) for _, d, s in rows), tags[qid]))
    return rankings


# -- qrels ------------------------------------------------------------------


@dataclass
class QRels:
    judgments: dict[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, grade in self.judgments.items():
            if grade < 0:
                raise ValueError(f"negative grade for {key}")

    def grade(self, query_id: str, doc_id: str) -> int:
        return self.judgments.get((query_id, doc_id), 0)

    def for_query(self, query_id: str) -> dict[str, int]:
        return {d: g for (q, d), g in self.judgments.items() if q == query_id}

    def relevant(self, query_id: str) -> set[str]:
        return {d for (q, d), g in self.judgments.items() if q == query_id and g > 0}

    @property
    def query_ids(self) -> list[str]:
        return sorted({q for q, _ in self.judgments})


def read_qrels(path: str | Path) -> QRels:
    judgments: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise MalformedLine(str(path), line_no, line.strip(), "expected 4 fields")
            qid, _, doc_id, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise MalformedLine(str(path), line_no, line.strip(), "grade is not an integer") from None
            if g < 0:
                raise MalformedLine(str(path), line_no, line.strip(), "negative grade")
            if (qid, doc_id) in judgments:
                raise DuplicateJudgment(qid, doc_id)
            judgments[(qid, doc_id)] = g
    return QRels(judgments)


def write_qrels(qrels: QRels, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for (qid, doc_id), grade in qrels.judgments.items():
            _check_token(qid, "query id")
            _check_token(doc_id, "doc id")
            f.write(f"{qid} 0 {doc_id} {grade}\n")

