"""Training-set assembly: label balancing, pool mixing, SFT export, ablations."""

from __future__ import annotations

import json
import logging
import random
import statistics
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from .errors import MissingTrace, PoolTooSmall
from .gateway import split_reasoning
from .judging import judge_prompt
from .records import LabeledPair, PairSource, Passage, Query, dump_jsonl_line

logger = logging.getLogger(__name__)


@dataclass
class MixSpec:
    seed_pool_count: int = 14000
    synth_count: int = 6000
    balance: bool = True
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.seed_pool_count < 0 or self.synth_count < 0:
            raise ValueError("mix counts must be non-negative")


@dataclass
class TrainManifest:
    lora_rank: int = 32
    lora_alpha: int = 64
    learning_rate: float = 6e-5
    batch_size: int = 128
    epochs: int = 5
    base_model: str = "Qwen/Qwen2.5-7B"
    dataset_path: str = ""

    def write(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(asdict(self), f, sort_keys=False)

    @classmethod
    def read(cls, path: str | Path) -> TrainManifest:
        with open(path, encoding="utf-8") as f:
            return cls(**yaml.safe_load(f))


class AblationVariant(str, Enum):
    FULL = "full"
    DAILY_ONLY = "daily_only"
    EXPERT_ONLY = "expert_only"
    SHORT_TRACE = "short_trace"
    LONG_TRACE = "long_trace"


def trace_tokens(pair: LabeledPair) -> int:
    return len(pair.reasoning_trace.split()) if pair.reasoning_trace else 0


def _split_labels(pairs: Sequence[LabeledPair]) -> tuple[list[LabeledPair], list[LabeledPair]]:
    pos = [p for p in pairs if p.intended_label]
    neg = [p for p in pairs if not p.intended_label]
    return pos, neg


def _sample_in_order(items: Sequence[LabeledPair], n: int, rng: random.Random) -> list[LabeledPair]:
    keep = sorted(rng.sample(range(len(items)), n))
    return [items[i] for i in keep]


def balance(pairs: Sequence[LabeledPair], rng_seed: int) -> list[LabeledPair]:
    """Downsample the majority label to the minority count; input order is kept."""
    pos, neg = _split_labels(pairs)
    if not pos or not neg:
        if pairs:
            logger.warning("cannot balance: one label class is empty (%d true, %d false)", len(pos), len(neg))
        return list(pairs)
    if len(pos) == len(neg):
        return list(pairs)
    rng = random.Random(rng_seed)
    n = min(len(pos), len(neg))
    chosen = {id(p) for p in _sample_in_order(pos, n, rng) + _sample_in_order(neg, n, rng)}
    return [p for p in pairs if id(p) in chosen]


def dedupe(pairs: Sequence[LabeledPair], name: str = "pool") -> list[LabeledPair]:
    seen: set[tuple[str, str, bool]] = set()
    out = []
    for p in pairs:
        key = (p.query.full_text, p.passage.text, p.intended_label)
        if key in seen:
            continue
        seen.add(key)
        out.append(p)
    if len(out) < len(pairs):
        logger.warning("%s: dropped %d exact-duplicate pairs", name, len(pairs) - len(out))
    return out


def sample_pool(pairs: Sequence[LabeledPair], count: int, balanced: bool, rng: random.Random, name: str) -> list[LabeledPair]:
    """Uniform seeded sample of ``count`` pairs, label-balanced to within one when asked."""
    if not balanced:
        if len(pairs) < count:
            raise PoolTooSmall(name, len(pairs), count)
        return _sample_in_order(pairs, count, rng)
    pos, neg = _split_labels(pairs)
    small, large = sorted((pos, neg), key=len)
    capacity = 2 * len(small) + (1 if len(large) > len(small) else 0)
    if capacity < count:
        raise PoolTooSmall(name, capacity, count)
    half = count // 2
    # an odd count takes its extra example from the larger class
    n_large = count - half
    picked = _sample_in_order(small, half, rng) + _sample_in_order(large, n_large, rng)
    order = {id(p): i for i, p in enumerate(pairs)}
    return sorted(picked, key=lambda p: order[id(p)])


def build_training_set(seed_pool: Sequence[LabeledPair], synth_pool: Sequence[LabeledPair], spec: MixSpec) -> list[LabeledPair]:
    rng = random.Random(spec.rng_seed)
    seed_part = sample_pool(dedupe(seed_pool, "seed_pool"), spec.seed_pool_count, spec.balance, rng, "seed_pool")
    synth_part = sample_pool(dedupe(synth_pool, "synth"), spec.synth_count, spec.balance, rng, "synth")
    mixed = seed_part + synth_part
    rng.shuffle(mixed)
    return mixed


def ablation_split(pairs: Sequence[LabeledPair], variant: AblationVariant | str) -> list[LabeledPair]:
    """Filter synthesized pairs for one ablation variant; seed-pool pairs always pass."""
    variant = AblationVariant(variant)
    if variant is AblationVariant.FULL:
        return list(pairs)
    synth = [p for p in pairs if p.source is PairSource.SYNTHESIZED]
    if variant in (AblationVariant.DAILY_ONLY, AblationVariant.EXPERT_ONLY):
        kind = "daily" if variant is AblationVariant.DAILY_ONLY else "expert"
        keep = lambda p: p.query.kind.value == kind  # noqa: E731
    else:
        median = statistics.median(trace_tokens(p) for p in synth) if synth else 0
        if variant is AblationVariant.SHORT_TRACE:
            keep = lambda p: trace_tokens(p) <= median  # noqa: E731
        else:
            keep = lambda p: trace_tokens(p) > median  # noqa: E731
    return [p for p in pairs if p.source is not PairSource.SYNTHESIZED or keep(p)]


# -- SFT export ---------------------------------------------------------------


def sft_record(pair: LabeledPair, system: str | None = None) -> dict[str, Any]:
    verdict = "true" if pair.intended_label else "false"
    target = f"<think>{pair.reasoning_trace}</think>{verdict}" if pair.reasoning_trace else verdict
    messages = []
    if system:
        messages.append({"role": "system", "content": system})
    messages.append({"role": "user", "content": judge_prompt(pair.query.full_text, pair.passage.text)})
    messages.append({"role": "assistant", "content": target})
    return {
        "messages": messages,
        "meta": {
            "pair_id": pair.pair_id,
            "label": pair.intended_label,
            "source": pair.source.value,
            "judge_verdict": pair.judge_verdict,
            "query": pair.query.to_dict(),
            "passage": pair.passage.to_dict(),
        },
    }


def emit_sft_records(
    pairs: Sequence[LabeledPair], path: str | Path, require_traces: bool = False, system: str | None = None
) -> int:
    if require_traces:
        missing = [p.pair_id for p in pairs if not p.reasoning_trace]
        if missing:
            raise MissingTrace(f"{len(missing)} pairs lack a reasoning trace, e.g. {missing[0]!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in pairs:
            f.write(dump_jsonl_line(sft_record(p, system)))
    return len(pairs)


def read_sft_records(path: str | Path) -> list[LabeledPair]:
    """Rebuild pairs from an SFT file; the trace is recovered from the assistant target."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            meta = rec["meta"]
            trace, _ = split_reasoning(rec["messages"][-1]["content"])
            pairs.append(
                LabeledPair(
                    query=Query.from_dict(meta["query"]),
                    passage=Passage.from_dict(meta["passage"]),
                    intended_label=meta["label"],
                    source=PairSource(meta["source"]),
                    reasoning_trace=trace,
                    judge_verdict=meta.get("judge_verdict"),
                )
            )
    return pairs


@dataclass
class BuildSummary:
    records: int
    true_count: int
    false_count: int
    per_pool: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def summarize(pairs: Sequence[LabeledPair]) -> BuildSummary:
    per_pool: dict[str, dict[str, int]] = {}
    for p in pairs:
        slot = per_pool.setdefault(p.source.value, {"true": 0, "false": 0})
        slot["true" if p.intended_label else "false"] += 1
    t = sum(1 for p in pairs if p.intended_label)
    return BuildSummary(len(pairs), t, len(pairs) - t, per_pool)

