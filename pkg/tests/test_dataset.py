import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthrank.dataset import (
    AblationVariant,
    MixSpec,
    TrainManifest,
    ablation_split,
    build_training_set,
    emit_sft_records,
    read_sft_records,
    sample_pool,
    sft_record,
)
from synthrank.errors import MissingTrace, PoolTooSmall
from synthrank.records import LabeledPair, PairSource, Passage, PassageRole, Query, QueryKind


def make_pair(i, label, source=PairSource.SYNTHESIZED, kind=QueryKind.EXPERT, trace_len=None):
    q = Query(f"q{i}", f"query {i}", kind, scenario="scene" if kind is QueryKind.DAILY else None)
    p = Passage(f"p{i}", f"passage {i}", PassageRole.POSITIVE if label else PassageRole.HARD_NEGATIVE)
    trace = " ".join(["w"] * trace_len) if trace_len else None
    return LabeledPair(q, p, label, source, trace)


def pool(n_true, n_false, source=PairSource.SYNTHESIZED, offset=0):
    return [make_pair(offset + i, i < n_true, source) for i in range(n_true + n_false)]


def test_paper_mix_reaches_twenty_thousand():
    seed = pool(7000, 7000, PairSource.SEED_POOL)
    synth = pool(5141, 5141, offset=100000)
    out = build_training_set(seed, synth, MixSpec())
    assert len(out) == 20000
    assert sum(p.source is PairSource.SEED_POOL for p in out) == 14000


def test_sample_pool_balances_and_reports_shortfall():
    rng = random.Random(0)
    got = sample_pool(pool(10, 3), 7, True, rng, "x")
    assert sum(p.intended_label for p in got) == 4 and len(got) == 7
    with pytest.raises(PoolTooSmall):
        sample_pool(pool(10, 3), 8, True, rng, "x")


def test_build_is_deterministic():
    seed, synth = pool(50, 50, PairSource.SEED_POOL), pool(30, 30, offset=1000)
    spec = MixSpec(40, 20, True, 9)
    assert build_training_set(seed, synth, spec) == build_training_set(seed, synth, spec)
    assert build_training_set(seed, synth, spec) != build_training_set(seed, synth, MixSpec(40, 20, True, 10))


def test_short_trace_uses_median():
    pairs = [make_pair(i, True, trace_len=n) for i, n in enumerate([10, 20, 30, 40])]
    short = ablation_split(pairs, "short_trace")
    assert sorted(len(p.reasoning_trace.split()) for p in short) == [10, 20]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.sampled_from([QueryKind.DAILY, QueryKind.EXPERT]), st.integers(1, 40)), max_size=40))
def test_ablation_partitions(specs):
    pairs = [make_pair(i, lab, kind=kind, trace_len=n) for i, (lab, kind, n) in enumerate(specs)]
    short = ablation_split(pairs, AblationVariant.SHORT_TRACE)
    long = ablation_split(pairs, AblationVariant.LONG_TRACE)
    ids = lambda ps: [p.pair_id for p in ps]  # noqa: E731
    assert not set(ids(short)) & set(ids(long))
    assert sorted(ids(short) + ids(long)) == sorted(ids(pairs))
    if pairs:
        med = statistics.median(n for _, _, n in specs)
        assert all(len(p.reasoning_trace.split()) <= med for p in short)
    assert ids(ablation_split(pairs, "daily_only")) == [p.pair_id for p in pairs if p.query.kind is QueryKind.DAILY]
    assert ids(ablation_split(pairs, "expert_only")) == [p.pair_id for p in pairs if p.query.kind is QueryKind.EXPERT]


def test_sft_record_shape():
    rec = sft_record(make_pair(1, False, trace_len=3), system="sys")
    assert [m["role"] for m in rec["messages"]] == ["system", "user", "assistant"]
    assert rec["messages"][1]["content"].startswith("Determine if the following passage is relevant")
    assert rec["messages"][2]["content"] == "<think>w w w</think>false"
    assert sft_record(make_pair(2, True))["messages"][-1]["content"] == "true"


def test_sft_round_trip(tmp_path):
    pairs = [make_pair(i, i % 2 == 0, trace_len=i + 1) for i in range(6)]
    path = tmp_path / "sft.jsonl"
    assert emit_sft_records(pairs, path) == 6
    assert read_sft_records(path) == pairs
    with pytest.raises(MissingTrace):
        emit_sft_records([make_pair(0, True)], tmp_path / "x.jsonl", require_traces=True)


def test_manifest_round_trip(tmp_path):
    m = TrainManifest(dataset_path="sft.jsonl")
    m.write(tmp_path / "m.yaml")
    assert TrainManifest.read(tmp_path / "m.yaml") == m
    assert (m.lora_rank, m.lora_alpha, m.learning_rate, m.batch_size, m.epochs) == (32, 64, 6e-5, 128, 5)
