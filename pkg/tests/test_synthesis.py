import json

import pytest

from synthrank.errors import DegenerateSolution, JsonShapeError, ParseError, RangeViolation, ScriptMiss
from synthrank.gateway import Gateway, mock_register, transcript_lines
from synthrank.records import Persona, PassageRole, Query, QueryKind
from synthrank.synthesis import (
    MaterialDesc,
    Polarity,
    StageConfig,
    Synthesizer,
    format_descriptions,
    parse_json_object,
    parse_numbered_list,
)

from helpers import personas, pipeline_script, seed_queries

KOMODO = Query("s1", "what did komodo dragons do", QueryKind.SEED)
POOL = [Persona("p1", "A marine biologist"), Persona("p2", "A retired teacher"), Persona("p3", "A software tester")]


def _synth(script, **cfg):
    return Synthesizer(Gateway.with_mock("m", mock_register(script)), StageConfig.single_endpoint("m", **cfg), POOL)


def test_persona_grounding_komodo():
    s = _synth([(("persona", "komodo dragons"), "A herpetologist specializing in monitor lizard ecology.")])
    with s.gateway.recording() as rec:
        persona = s.ground_persona(KOMODO, POOL)
    assert persona.description.startswith("A herpetologist specializing in")
    assert "1. A marine biologist\n2. A retired teacher\n3. A software tester" in rec[0].request.user


def test_daily_and_expert_expansions():
    daily_reply = json.dumps(
        {
            "query": "Do they dominate through size or through hunting strategy?",
            "scenario": "During fieldwork I saw researchers disagree about dominance versus hunting strategy.",
        }
    )
    s = _synth(
        [
            (("daily", "komodo"), f"Here you go:\n```json\n{daily_reply}\n```"),
            (("daily", "glucose"), '{"query": "What are the optimal blood sugar targets I should aim for?", "scenario": "I teach diabetes classes."}'),
            (("expert", "driverquery.exe"), "How does querying drivers through WMI trade off against security exposure?"),
            (("expert", "bbq island"), "Which sustainable materials hold up in an outdoor bbq island build?"),
        ]
    )
    herp = Persona("s1-persona", "A herpetologist")
    d = s.expand_daily(KOMODO, herp)
    assert d.kind is QueryKind.DAILY and d.persona_id == "s1-persona"
    assert "hunting strategy" in d.text and "dominance" in d.scenario
    g = s.expand_daily(Query("s2", "what is a good glucose number", QueryKind.SEED), Persona("e", "A diabetes educator"))
    assert "optimal blood sugar targets" in g.text
    wmi = s.expand_expert(Query("s3", "what is driverquery.exe", QueryKind.SEED))
    assert wmi.kind is QueryKind.EXPERT and "WMI" in wmi.text and "security" in wmi.text
    bbq = s.expand_expert(Query("s4", "how much does it cost to build a bbq island", QueryKind.SEED))
    assert "sustainable materials" in bbq.text


def test_passages_follow_polarity():
    s = _synth(
        [
            (("passage", "hunting and feeding"), "Komodo dragons ambush prey along game trails..."),
            (("passage", "crocodiles"), "Crocodiles eat mostly fish but also birds and mammals..."),
        ]
    )
    pos = s.gen_passage(MaterialDesc(1, "Documentary notes on Komodo hunting and feeding behavior", Polarity.POSITIVE))
    neg = s.gen_passage(MaterialDesc(1, "Studies of the diets of crocodiles, not Komodo dragons", Polarity.NEGATIVE))
    assert pos.role is PassageRole.POSITIVE and "ambush" in pos.text
    assert neg.role is PassageRole.HARD_NEGATIVE and "Crocodiles" in neg.text
    assert neg.material_desc.startswith("Studies of the diets")


@pytest.mark.parametrize("n,ok", [(2, False), (3, True), (7, True), (8, False)])
def test_material_range(n, ok):
    reply = "\n".join(f"{i}. desc {i}" for i in range(1, n + 1))
    s = _synth([(("extract", ""), reply)])
    if ok:
        assert len(s.extract_materials("a solution")) == n
    else:
        with pytest.raises(RangeViolation) as e:
            s.extract_materials("a solution")
        assert e.value.count == n


def test_negative_range_six_rejected():
    s = _synth([(("negatives", ""), "\n".join(f"{i}. n{i}" for i in range(1, 7)))])
    with pytest.raises(RangeViolation) as e:
        s.gen_negative_descs(Query("q", "x", QueryKind.EXPERT), [MaterialDesc(1, "d", Polarity.POSITIVE)])
    assert e.value.count == 6


def test_range_retry_then_success():
    s = _synth([{"stage": "extract", "contains": "", "responses": ["1. only\n2. two", "1. a\n2. b\n3. c"]}])
    assert [d.text for d in s.extract_materials("sol")] == ["a", "b", "c"]


def test_degenerate_solution_after_retry():
    s = _synth([(("solve", ""), "too short")], solution_floor=50)
    with pytest.raises(DegenerateSolution):
        s.solve_cot(Query("q", "x", QueryKind.EXPERT))


def test_parsers():
    assert parse_numbered_list("intro\n1. [alpha]\n2) beta\n  3.   gamma  \nnot numbered", "x") == ["alpha", "beta", "gamma"]
    with pytest.raises(ParseError):
        parse_numbered_list("no list here", "x")
    assert parse_json_object('noise {"query": " q ", "scenario": "s"} tail', "daily", ["query", "scenario"]) == {"query": "q", "scenario": "s"}
    with pytest.raises(JsonShapeError):
        parse_json_object('{"query": "q"}', "daily", ["query", "scenario"])
    assert format_descriptions([MaterialDesc(1, "a", Polarity.POSITIVE), MaterialDesc(2, "b", Polarity.POSITIVE)]) == "\n1. a\n2. b"


def test_one_seed_fans_out_to_twelve_pairs():
    # 4 positives + 2 negatives per expansion, two expansions
    script = [
        (("persona", ""), "A curious hobbyist"),
        (("daily", ""), '{"query": "DAILYQ", "scenario": "at home"}'),
        (("expert", ""), "EXPERTQ"),
        (("solve", ""), "x" * 80),
        (("extract", ""), "1. m1\n2. m2\n3. m3\n4. m4"),
        (("negatives", ""), "1. n1\n2. n2"),
        (("passage", ""), "generated passage"),
    ]
    result = _synth(script).synthesize([KOMODO], seed=3)
    assert len(result.pairs) == 12
    assert [p.intended_label for p in result.pairs] == ([True] * 4 + [False] * 2) * 2
    assert [p.query.kind for p in result.pairs] == [QueryKind.DAILY] * 6 + [QueryKind.EXPERT] * 6
    assert result.report.to_dict()["seeds_ok"] == 1


def test_failure_isolated_to_seed():
    seeds = seed_queries(3)
    script, _ = pipeline_script(seeds)
    # break the second seed's expert solution
    script = [e for e in script if not (e["stage"] == "solve" and e["contains"] == "Q-seed01-expert:")]
    script.insert(0, {"stage": "solve", "contains": "Q-seed01-expert:", "response": "short"})
    s = Synthesizer(Gateway.with_mock("m", mock_register(script)), StageConfig.single_endpoint("m"), personas())
    result = s.synthesize(seeds, seed=1)
    assert result.report.seeds_failed == 1
    assert result.report.failures[0].seed_id == "seed01" and result.report.failures[0].stage == "solve"
    assert {p.query.id.split("-")[0] for p in result.pairs} == {"seed00", "seed02"}


def test_script_miss_is_not_swallowed():
    s = _synth([(("persona", ""), "someone")])
    with pytest.raises(ScriptMiss):
        s.synthesize([KOMODO])


def test_parallel_matches_sequential():
    seeds = seed_queries(6)
    script, _ = pipeline_script(seeds)

    def run(workers):
        s = Synthesizer(Gateway.with_mock("m", mock_register(script)), StageConfig.single_endpoint("m", workers=workers), personas())
        r = s.synthesize(seeds, seed=5)
        return [p.to_dict() for p in r.pairs], transcript_lines(r.transcript)

    assert run(1) == run(4)
