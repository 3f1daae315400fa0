import pytest

from synthrank.bm25 import build_index, retrieve
from synthrank.errors import EmptyDataset, NoChoice, SynthRankError
from synthrank.gateway import EndpointSpec, Gateway, mock_register
from synthrank.rag import RagConfig, evaluate_rag, extract_choice, preset, rag_answer
from synthrank.records import Document, McQuestion
from synthrank.rerank import PassThroughReranker, PointwiseReranker

from helpers import rag_scenario

OPTS = (("A", "red dwarf"), ("B", "blue giant"), ("C", "white dwarf"), ("D", "neutron star"))


@pytest.mark.parametrize(
    "text,letter",
    [
        ("The answer is (B).", "B"),
        ("Answer: D", "D"),
        ("answer is **C**", "C"),
        ("I weighed A and B carefully, so C.", "C"),
        ("The answer is a detailed one: D", "D"),
        ("Probably a white dwarf", "C"),
    ],
)
def test_extract_choice(text, letter):
    assert extract_choice(text, OPTS) == letter


def test_extract_choice_fallthrough():
    with pytest.raises(NoChoice):
        extract_choice("no idea", OPTS)


def test_presets():
    assert (preset("main").rerank_k, preset("appendix").rerank_k) == (100, 20)
    with pytest.raises(ValueError):
        RagConfig(retrieve_k=10, rerank_k=20)


def _setup(scenario, oracle):
    backend = mock_register(scenario.script)
    gw = Gateway.with_mock("m", backend)
    gw.add_endpoint(EndpointSpec("reader", "mock:inline"), backend)
    index = build_index(scenario.docs)
    texts = {d.id: d.text for d in scenario.docs}
    reranker = PointwiseReranker(gw, "m", method="logprob") if oracle else PassThroughReranker()
    return gw, index, texts, reranker


def test_oracle_rag_answer_and_provenance():
    sc = rag_scenario(3, 18)
    gw, index, texts, rr = _setup(sc, oracle=True)
    q = sc.questions[0]
    a = rag_answer(q, index, texts, rr, gw, preset("main"))
    assert a.correct and a.context_ids[0] == sc.gold_docs[q.id] and len(a.context_ids) == 3
    again = rag_answer(q, index, texts, rr, gw, preset("main"))
    assert (again.letter, again.context_ids) == (a.letter, a.context_ids)


def test_context_truncates_to_available_docs():
    docs = [Document("x", "alpha"), Document("y", "beta")]
    q = McQuestion("q", "alpha?", (("A", "a"), ("B", "b")), "A")
    gw = Gateway.with_mock("reader", mock_register([(("reader", ""), "Answer: A")]))
    a = rag_answer(q, build_index(docs), {d.id: d.text for d in docs}, PassThroughReranker(), gw, RagConfig())
    assert a.context_ids == ["x", "y"] and a.correct


def test_counting_and_abstentions():
    qs = [McQuestion(f"q{i}", f"stem {i}", (("A", "x"), ("B", "y")), "A") for i in range(4)]
    script = [
        (("reader", "stem 0"), "Answer: A"),
        (("reader", "stem 1"), "Answer: A"),
        (("reader", "stem 2"), "Answer: A"),
        (("reader", "stem 3"), "no clue"),
    ]
    docs = [Document("d", "stem")]
    gw = Gateway.with_mock("reader", mock_register(script))
    res = evaluate_rag(qs, build_index(docs), {"d": "stem"}, PassThroughReranker(), gw, RagConfig(), workers=2)
    assert res.accuracy == 0.75 and (res.correct, res.incorrect, res.abstained) == (3, 0, 1)
    assert len(res.transcript) == 4
    with pytest.raises(EmptyDataset):
        evaluate_rag([], build_index(docs), {"d": "stem"}, PassThroughReranker(), gw, RagConfig())


def test_reader_failure_abstains():
    class Broken:
        def complete(self, req):
            raise SynthRankError("down")

        def close(self):
            pass

    docs = [Document("d", "stem")]
    gw = Gateway({"reader": EndpointSpec("reader", "mock:x")}, backends={"reader": Broken()})
    a = rag_answer(McQuestion("q", "stem", (("A", "x"), ("B", "y")), "A"), build_index(docs), {"d": "stem"}, PassThroughReranker(), gw, RagConfig())
    assert a.abstained and not a.correct


def test_passthrough_equals_retrieve_only_contexts():
    sc = rag_scenario(2, 10)
    gw, index, texts, rr = _setup(sc, oracle=False)
    for q in sc.questions:
        a = rag_answer(q, index, texts, rr, gw, preset("main"))
        assert a.context_ids == retrieve(q.stem, index, 100).doc_ids[:3]
