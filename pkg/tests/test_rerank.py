import math

import pytest

from synthrank.errors import ScriptMiss
from synthrank.gateway import ChatExchange, ChatRequest, Gateway, mock_register
from synthrank.records import Query, QueryKind, Ranking
from synthrank.rerank import PassThroughReranker, PointwiseReranker, RelevanceScore, ScoreMethod, score_exchange, two_way_softmax

Q = Query("q", "which doc", QueryKind.SEED)


def _ex(final, logprobs=None, trace=None):
    req = ChatRequest(endpoint_id="m", user="u", want_logprobs=logprobs is not None)
    return ChatExchange(req, final, final, trace, logprobs, 1)


def test_two_way_softmax():
    assert two_way_softmax(2.0, 0.0) == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-12)
    assert two_way_softmax(2.0, 0.0) == pytest.approx(0.8808, abs=1e-4)
    assert two_way_softmax(-800.0, -801.0) == pytest.approx(1 / (1 + math.exp(-1)))
    assert two_way_softmax(-math.inf, -1.0) == 0.0 and two_way_softmax(-1.0, -math.inf) == 1.0


def test_score_exchange_logprob_and_fallback():
    s = score_exchange(_ex("true", {" True": -0.1, "false": -2.0, "maybe": -3.0}))
    assert s.method is ScoreMethod.LOGPROB and s.value == pytest.approx(two_way_softmax(-0.1, -2.0))
    # no verdict tokens among the logprobs: fall back to the text
    s = score_exchange(_ex("false", {"hmm": -0.1}))
    assert s.method is ScoreMethod.TEXT_BINARY and s.value == 0.0
    assert score_exchange(_ex("True")).value == 1.0


def test_relevance_score_bounds():
    with pytest.raises(ValueError):
        RelevanceScore(1.5, ScoreMethod.LOGPROB)
    with pytest.raises(ValueError):
        RelevanceScore(0.5, ScoreMethod.TEXT_BINARY)


def _ranker(script, **kw):
    return PointwiseReranker(Gateway.with_mock("m", mock_register(script)), "m", **kw)


def test_rerank_orders_by_score_and_keeps_tail():
    cands = Ranking("q", (("a", 3.0), ("b", 2.0), ("c", 1.0), ("d", 0.5)))
    script = [
        {"stage": "rerank", "contains": "Passage: text-a", "response": {"text": "false", "logprobs": {"true": -3.0, "false": -0.1}}},
        {"stage": "rerank", "contains": "Passage: text-b", "response": {"text": "true", "logprobs": {"true": -0.1, "false": -3.0}}},
        {"stage": "rerank", "contains": "Passage: text-c", "response": {"text": "true", "logprobs": {"true": -0.1, "false": -3.0}}},
    ]
    texts = {d: f"text-{d}" for d in "abcd"}
    r, report = _ranker(script, method="logprob").rerank_with_report(Q, cands, texts, k_in=3)
    # b and c tie, so they keep first-stage order; d was never scored
    assert r.doc_ids == ["b", "c", "a", "d"]
    assert report.scored == 3 and report.unscored_tail == 1 and len(report.transcript) == 3
    assert [row["doc_id"] for row in report.sidecar] == ["a", "b", "c"]


def test_failed_candidates_sink_below_zero_scores():
    cands = Ranking("q", (("a", 2.0), ("b", 1.0)))
    script = [
        {"stage": "rerank", "contains": "Passage: text-a", "response": "no idea"},
        {"stage": "rerank", "contains": "Passage: text-b", "response": "false"},
    ]
    r, report = _ranker(script, method="text").rerank_with_report(Q, cands, {"a": "text-a", "b": "text-b"})
    assert r.doc_ids == ["b", "a"] and report.no_verdict == 1


def test_text_mode_does_not_request_logprobs():
    r = _ranker([(("rerank", ""), "<think>x</think>true")], method="text")
    with r.gateway.recording() as rec:
        r.relevance_score(Q, "p")
    assert rec[0].request.want_logprobs is False


def test_script_miss_propagates():
    with pytest.raises(ScriptMiss):
        _ranker([(("judge", ""), "true")]).rerank(Q, Ranking("q", (("a", 1.0),)), {"a": "x"})


def test_passthrough():
    cands = Ranking("q", (("a", 1.0),))
    assert PassThroughReranker().rerank(Q, cands, {}) is cands
