"""Exception hierarchy.

Errors split into two families so the CLI can map them onto exit codes:
``PreconditionError`` (bad input or config, exit 2) and everything else
deriving from ``SynthRankError`` (runtime failure, exit 1).
"""

from __future__ import annotations


class SynthRankError(Exception):
    """Base class for all errors raised by this package."""


class PreconditionError(SynthRankError):
    """Inputs or configuration violate a precondition."""


# -- corpus io -------------------------------------------------------------


class MalformedLine(PreconditionError):
    def __init__(self, path: str, line_no: int, excerpt: str, reason: str = "") -> None:
        self.path = path
        self.line_no = line_no
        self.excerpt = excerpt
        msg = f"{path}:{line_no}: malformed line {excerpt[:80]!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class MissingField(PreconditionError):
    def __init__(self, name: str, line_no: int | None = None, path: str | None = None) -> None:
        self.name = name
        self.line_no = line_no
        where = f"{path or '<records>'}:{line_no}: " if line_no is not None else ""
        super().__init__(f"{where}missing required field {name!r}")


class DuplicateDoc(PreconditionError):
    def __init__(self, query_id: str, doc_id: str) -> None:
        self.query_id = query_id
        self.doc_id = doc_id
        super().__init__(f"doc {doc_id!r} listed twice for query {query_id!r}")


class NonMonotoneScore(PreconditionError):
    def __init__(self, query_id: str, doc_id: str) -> None:
        self.query_id = query_id
        self.doc_id = doc_id
        super().__init__(f"score of {doc_id!r} under {query_id!r} exceeds the entry ranked above it")


class DuplicateJudgment(PreconditionError):
    def __init__(self, query_id: str, doc_id: str) -> None:
        self.query_id = query_id
        self.doc_id = doc_id
        super().__init__(f"duplicate judgment for ({query_id!r}, {doc_id!r})")


# -- llm gateway -----------------------------------------------------------


class EndpointUnknown(PreconditionError):
    def __init__(self, endpoint_id: str) -> None:
        self.endpoint_id = endpoint_id
        super().__init__(f"unknown endpoint {endpoint_id!r}")


class ExhaustedRetries(SynthRankError):
    def __init__(self, endpoint_id: str, attempts: int, last_status: int | str | None) -> None:
        self.endpoint_id = endpoint_id
        self.attempts = attempts
        self.last_status = last_status
        super().__init__(f"{endpoint_id}: gave up after {attempts} attempts (last status {last_status})")


class ResponseUnparseable(SynthRankError):
    pass


class UnterminatedTrace(SynthRankError):
    pass


class ScriptMiss(SynthRankError):
    def __init__(self, summary: str) -> None:
        self.summary = summary
        super().__init__(f"no mock script entry matches request: {summary}")


# -- synthesis -------------------------------------------------------------


class StageError(SynthRankError):
    """A generation stage produced output that cannot be used."""

    stage: str = ""


class EmptyGeneration(StageError):
    def __init__(self, stage: str) -> None:
        self.stage = stage
        super().__init__(f"{stage}: model returned an empty generation")


class JsonShapeError(StageError):
    def __init__(self, stage: str, detail: str) -> None:
        self.stage = stage
        super().__init__(f"{stage}: {detail}")


class DegenerateSolution(StageError):
    def __init__(self, length: int, floor: int) -> None:
        self.stage = "solve"
        self.length = length
        super().__init__(f"solve: solution has {length} chars, floor is {floor}")


class RangeViolation(StageError):
    def __init__(self, stage: str, count: int, lo: int, hi: int) -> None:
        self.stage = stage
        self.count = count
        super().__init__(f"{stage}: got {count} items, expected {lo}-{hi}")


class ParseError(StageError):
    def __init__(self, stage: str, detail: str = "no numbered list found") -> None:
        self.stage = stage
        super().__init__(f"{stage}: {detail}")


# -- judging / metrics / rag -----------------------------------------------


class NoVerdict(SynthRankError):
    pass


class AlignmentError(PreconditionError):
    pass


class PoolTooSmall(PreconditionError):
    def __init__(self, pool: str, have: int, want: int) -> None:
        self.pool = pool
        self.have = have
        self.want = want
        super().__init__(f"{pool} pool can supply {have} examples, {want} requested")


class MissingTrace(PreconditionError):
    pass


class DuplicateDocId(PreconditionError):
    pass


class EmptyCorpus(PreconditionError):
    pass


class UnknownDoc(SynthRankError):
    pass


class MissingQuery(PreconditionError):
    pass


class NoChoice(SynthRankError):
    pass


class EmptyDataset(PreconditionError):
    pass


class ConfigError(PreconditionError):
    pass
