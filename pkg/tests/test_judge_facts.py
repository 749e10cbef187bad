import itertools

import pytest

from faithgen.evaluation.facts import (FactEvaluator, FactSet, compute_prh, compute_salient, fact_type,
                                       is_affirmative, parse_list_response, rank_salient_features,
                                       result_from_transcript)
from faithgen.evaluation.judge import (EchoJudge, FixtureJudge, JudgeError, LexicalJudge, ResponseParseError,
                                       RetryPolicy, TemplateJudge, Transcript, load_templates)
from faithgen.kg_data import KGGraph, TextSample, linearize
from faithgen.synthetic import SALIENT_RELATIONS, fixture_table, make_fact_fixture, make_house_corpus


class ScriptedJudge(TemplateJudge):
    def __init__(self, facts, yes=(), ext="None", intr="None"):
        super().__init__()
        self.facts, self.yes, self.ext, self.intr = facts, set(yes), ext, intr

    def answer_input_facts(self, input):
        return "\n".join(f"{i}. {f}" for i, f in enumerate(self.facts, 1))

    def answer_common_fact(self, input, output, fact):
        return "Yes." if fact in self.yes else "No."

    def answer_extrinsic(self, input, output):
        return self.ext

    def answer_intrinsic(self, input, output):
        return self.intr


LIN = "<H> house <R> bedrooms <T> 3"


def test_templates_load_and_have_fields():
    t = load_templates()
    assert set(t) == {"input_facts", "common_fact", "extrinsic", "intrinsic", "fluency"}
    assert t["input_facts"].fields == ["input"]
    assert set(t["common_fact"].fields) == {"input", "output", "fact"}
    rendered = t["extrinsic"].render(input="X", output="Y")
    assert t["extrinsic"].match(rendered) == {"input": "X", "output": "Y"}
    assert t["intrinsic"].match(rendered) is None


def test_fixture_passthrough_twelve():
    facts = [f"feature {i}" for i in range(12)]
    ev = FactEvaluator(ScriptedJudge(facts))
    assert len(ev.enumerate_input_facts(LIN)) == 12


def test_echo_judge_counts_triples():
    g = KGGraph.from_triples([("h", f"r{i}", f"t{i}") for i in range(7)])
    assert len(FactEvaluator(EchoJudge()).enumerate_input_facts(linearize(g))) == 7


def test_duplicates_deduplicated():
    assert len(parse_list_response("1. a fact\n2. A FACT\n3. other")) == 2


@pytest.mark.parametrize("raw,expected", [
    ("None", 0), ("None.", 0), ("No such features.", 0), ("", 0),
    ("Here are the features:\n1. a\n2. b", 2), ("- a\n- b\n- c", 3), ("1) a\n2) b", 2), ("* a", 1),
])
def test_list_parsing(raw, expected):
    assert len(parse_list_response(raw)) == expected


def test_unparseable_response_keeps_raw():
    with pytest.raises(ResponseParseError) as err:
        parse_list_response("I think the graph is about a house\nwith bedrooms")
    assert "bedrooms" in err.value.raw


@pytest.mark.parametrize("raw,verdict", [("Yes.", True), ("YES, it is", True), ("1. yes", True),
                                         ("No.", False), ("no", False), ("Unclear", None), ("", None)])
def test_affirmative(raw, verdict):
    assert is_affirmative(raw) is verdict


def test_common_all_and_none():
    facts = [f"f{i}" for i in range(10)]
    assert FactEvaluator(ScriptedJudge(facts, yes=facts)).count_common_facts(FactSet.of(facts), "out", LIN) == 10
    assert FactEvaluator(ScriptedJudge(facts)).count_common_facts(FactSet.of(facts), "out", LIN) == 0


def test_common_one_query_per_fact():
    facts = [f"f{i}" for i in range(6)]
    ev = FactEvaluator(ScriptedJudge(facts, yes=facts[:2]), max_in_flight=3)
    assert ev.count_common_facts(FactSet.of(facts), "out", LIN, "s") == 2
    entries = [e for e in ev.transcript.entries if e.template_id == "common_fact"]
    assert [e.fact for e in entries] == facts


def test_common_needs_facts():
    with pytest.raises(ValueError):
        FactEvaluator(ScriptedJudge([])).count_common_facts(FactSet(), "out", LIN)


def test_hallucinated_union():
    ev = FactEvaluator(ScriptedJudge([], ext="1. a\n2. b", intr="- B\n- c"))
    assert len(ev.enumerate_hallucinated_facts(LIN, "out")) == 3
    assert len(FactEvaluator(ScriptedJudge([])).enumerate_hallucinated_facts(LIN, "out")) == 0


def test_compute_prh_examples():
    r = compute_prh(20, 10, 5)
    assert (r.precision, r.recall, r.hallucination_rate) == pytest.approx((10 / 15, 0.5, 5 / 15))
    r = compute_prh(8, 8, 0)
    assert (r.precision, r.recall, r.hallucination_rate) == (1.0, 1.0, 0.0)
    r = compute_prh(4, 0, 0)
    assert r.degenerate and r.precision == 0 and r.hallucination_rate == 0
    with pytest.raises(ValueError):
        compute_prh(0, 0, 1)


def test_prh_identity_exhaustive():
    for n_in, n_c, n_h in itertools.product(range(1, 8), range(8), range(8)):
        r = compute_prh(n_in, n_c, n_h)
        assert r.n_output == n_c + n_h
        if r.n_output:
            assert r.precision + r.hallucination_rate == pytest.approx(1.0, abs=1e-15)


def test_fixture_counts_match_tables():
    fixtures = make_fact_fixture(50)
    ev = FactEvaluator(FixtureJudge(fixture_table(fixtures)))
    for fx in fixtures:
        res = ev.evaluate(fx.id, fx.linearized, fx.output)
        assert res.n_input == len(fx.input_facts)
        assert res.n_common == sum(fx.included.values())
        assert res.n_hallucinated == len({f.casefold() for f in fx.extrinsic + fx.intrinsic})
        again = result_from_transcript(ev.transcript.for_sample(fx.id))
        assert again == res


def test_transcript_round_trip(tmp_path):
    fixtures = make_fact_fixture(5)
    ev = FactEvaluator(FixtureJudge(fixture_table(fixtures)))
    results = {fx.id: ev.evaluate(fx.id, fx.linearized, fx.output) for fx in fixtures}
    ev.transcript.write(tmp_path / "t.jsonl")
    t = Transcript.read(tmp_path / "t.jsonl")
    for sid, res in results.items():
        assert result_from_transcript(t.for_sample(sid)) == res


def test_retry_policy_backoff():
    calls, sleeps = [], []

    def flaky():
        calls.append(1)
        if len(calls) < 3:
            raise JudgeError("down")
        return "ok"

    assert RetryPolicy(3, backoff=0.5, factor=2).run(flaky, sleep=sleeps.append) == "ok"
    assert sleeps == [0.5, 1.0]
    with pytest.raises(JudgeError):
        RetryPolicy(1, backoff=0.1).run(lambda: (_ for _ in ()).throw(JudgeError("x")), sleep=lambda s: None)


def test_lexical_judge_behaviour():
    lin = "<H> house <R> bedrooms <T> 3 <H> house <R> location <T> kew"
    j = LexicalJudge()
    ev = FactEvaluator(j)
    res = ev.evaluate("s", lin, "It has 3 bedrooms. A wine cellar sits beneath the kitchen.")
    assert (res.n_input, res.n_common, res.n_hallucinated) == (2, 1, 1)


# -- salient -----------------------------------------------------------------

def test_salient_list_matches_reference_features():
    assert rank_salient_features(make_house_corpus(300, seed=0)) == list(SALIENT_RELATIONS)
    assert rank_salient_features(make_house_corpus(120, seed=9)) == list(SALIENT_RELATIONS)


def test_salient_uniform_is_lexicographic():
    rels = ["zeta", "alpha", "mid", "beta"]
    train = [TextSample("x", KGGraph.from_triples([("h", r, "v") for r in rels]), "t")]
    assert rank_salient_features(train, k=3) == ["alpha", "beta", "mid"]
    assert rank_salient_features(train, k=10) == sorted(rels)


def test_salient_permutation_invariant_and_brute_force(house_samples):
    from collections import Counter

    brute = Counter()
    for s in house_samples:
        for _, r, _ in s.graph.triples:
            brute[r] += 1
    expected = sorted(brute, key=lambda r: (-brute[r], r))[:10]
    assert rank_salient_features(house_samples) == expected
    assert rank_salient_features(list(reversed(house_samples))) == expected


def test_salient_hand_cases():
    facts = FactSet.of([f"{r}: v" for r in SALIENT_RELATIONS] + [f"extra_{i}: v" for i in range(5)])
    common = {f: True for f in facts}
    r = compute_salient(facts, common, SALIENT_RELATIONS, n_output=20,
                        labels=list(SALIENT_RELATIONS) + [f"extra_{i}" for i in range(5)])
    assert (r.precision, r.recall) == (0.5, 1.0)
    none = compute_salient(facts, {}, SALIENT_RELATIONS, n_output=20)
    assert (none.precision, none.recall) == (0.0, 0.0)
    empty = compute_salient(FactSet.of(["extra_1: v"]), {}, SALIENT_RELATIONS, n_output=3,
                            labels=["extra_1"] + list(SALIENT_RELATIONS))
    assert empty.degenerate_recall


def test_fact_type_longest_label():
    labels = ["bedrooms", "house_location", "location", "parking_spaces"]
    assert fact_type("house_location: kew", labels) == "house_location"
    assert fact_type("Parking spaces: 2", labels) == "parking_spaces"
    assert fact_type("pool: yes", labels) is None


def test_remote_judge_wire_format(monkeypatch):
    import httpx

    from faithgen.evaluation.judge import RemoteJudge

    seen = {}
    attempts = []

    def fake_post(url, timeout, headers, json):
        attempts.append(1)
        seen.update(url=url, timeout=timeout, headers=headers, body=json)
        if len(attempts) == 1:
            raise httpx.ConnectError("refused")
        return httpx.Response(200, json={"choices": [{"message": {"content": "Yes."}}]},
                              request=httpx.Request("POST", url))

    monkeypatch.setenv("JUDGE_KEY", "secret")
    monkeypatch.setattr(httpx, "post", fake_post)
    judge = RemoteJudge("https://judge.invalid/v1/chat/completions", "some-model", "JUDGE_KEY", timeout=5)
    judge.retry.backoff = 0.0
    assert judge.complete("hello") == "Yes."
    assert len(attempts) == 2
    assert seen["headers"]["Authorization"] == "Bearer secret"
    assert seen["body"]["messages"] == [{"role": "user", "content": "hello"}]
    assert seen["body"]["model"] == "some-model" and seen["timeout"] == 5

    monkeypatch.delenv("JUDGE_KEY")
    with pytest.raises(JudgeError, match="JUDGE_KEY"):
        judge.complete("hello")
