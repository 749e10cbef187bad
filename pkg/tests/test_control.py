import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faithgen.control import (Hal, LexicalOverlapScorer, ScoringError, FaithfulnessScore, apply_control_token,
                              assign_buckets, has_control_token, load_bucket_tags, score_faithfulness,
                              strip_control_token)
from faithgen.kg_data import HAL_TOKENS, KGGraph, Vocabulary, linearize, split_tokens


def _lin(*triples):
    return linearize(KGGraph.from_triples(triples))


def test_full_coverage_scores_one():
    lin = _lin(("house", "bedrooms", "five"))
    assert LexicalOverlapScorer()(lin.text, "The house has five bedrooms.") == 1.0


def test_two_thirds_hand_count():
    lin = _lin(("house", "bedrooms", "five"))
    assert LexicalOverlapScorer(stopwords=())(lin.text, "five bedrooms pool") == pytest.approx(2 / 3, abs=1e-12)


def test_no_content_tokens_errors():
    with pytest.raises(ScoringError):
        LexicalOverlapScorer()("<H> a <R> b <T> c", "the of , .")
    with pytest.raises(ScoringError):
        score_faithfulness("x", _lin(("a", "b", "c")), "  ", LexicalOverlapScorer())


def test_appending_unsupported_token_strictly_decreases(house_samples):
    scorer = LexicalOverlapScorer()
    for s in house_samples:
        lin = linearize(s.graph).text
        before = scorer(lin, s.reference)
        after = scorer(lin, s.reference + " zeppelin")
        assert after < before


@settings(max_examples=300)
@given(st.text(min_size=1, max_size=60), st.text(min_size=1, max_size=60))
def test_scorer_range_and_one_iff_supported(graph_text, text):
    scorer = LexicalOverlapScorer()
    content = scorer.content_tokens(text)
    if not content:
        return
    s = scorer(graph_text, text)
    assert 0.0 <= s <= 1.0
    graph = set(split_tokens(graph_text, specials=True))
    assert (s == 1.0) == all(t in graph for t in content)


def _scores(values, name="lexical_overlap"):
    return [FaithfulnessScore(f"s{i:03d}", v, name) for i, v in enumerate(values)]


def test_seven_samples_sizes():
    a = assign_buckets(_scores([0.1 * i for i in range(7)]))
    assert [a.sizes()[t] for t in Hal] == [3, 2, 2]


def test_three_samples_forced_order():
    a = assign_buckets([FaithfulnessScore("x", 0.9, "s"), FaithfulnessScore("y", 0.5, "s"),
                        FaithfulnessScore("z", 0.1, "s")])
    assert [a.tag_of(i) for i in "xyz"] == [Hal.LOW, Hal.MEDIUM, Hal.HIGH]


def test_equal_scores_follow_id_order():
    scores = _scores([0.5] * 9)
    shuffled = list(scores)
    random.Random(1).shuffle(shuffled)
    a, b = assign_buckets(scores), assign_buckets(shuffled)
    assert a.entries == b.entries
    assert [a.tag_of(f"s{i:03d}") for i in range(9)] == [Hal.LOW] * 3 + [Hal.MEDIUM] * 3 + [Hal.HIGH] * 3


def test_bucketing_errors():
    with pytest.raises(ValueError, match="at least 3"):
        assign_buckets(_scores([0.1, 0.2]))
    with pytest.raises(ValueError, match="scorers"):
        assign_buckets(_scores([0.1, 0.2]) + [FaithfulnessScore("other", 0.3, "bartscore")])
    with pytest.raises(ScoringError):
        FaithfulnessScore("x", math.nan, "s")


@settings(max_examples=300)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=3, max_size=200), st.randoms())
def test_bucket_invariants(values, rnd):
    scores = _scores(values)
    a = assign_buckets(scores)
    sizes = list(a.sizes().values())
    assert max(sizes) - min(sizes) <= 1
    assert set(a.entries) == {s.sample_id for s in scores}
    by_tag = {t: [e.score for e in a.entries.values() if e.tag == t] for t in Hal}
    assert min(by_tag[Hal.LOW]) >= max(by_tag[Hal.MEDIUM])
    assert min(by_tag[Hal.MEDIUM]) >= max(by_tag[Hal.HIGH])
    perm = list(scores)
    rnd.shuffle(perm)
    assert assign_buckets(perm).entries == a.entries


def test_bucket_file_round_trip(tmp_path):
    a = assign_buckets(_scores([0.3, 0.9, 0.1, 0.5, 0.7]))
    a.write(tmp_path / "b.jsonl")
    assert load_bucket_tags(tmp_path / "b.jsonl") == {k: e.tag for k, e in a.entries.items()}
    assert a.__class__.read(tmp_path / "b.jsonl").entries == a.entries
    import json

    rec = json.loads((tmp_path / "b.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"id", "score", "scorer", "tag"}


def test_apply_control_token():
    lin = _lin(("a", "b", "c"))
    assert apply_control_token(lin, Hal.LOW) == "<hal_low> <H> a <R> b <T> c"
    tag, rest = strip_control_token(apply_control_token(lin, Hal.HIGH))
    assert tag is Hal.HIGH and rest == lin.text
    assert has_control_token("<hal_medium> <H> a <R> b <T> c")
    assert not has_control_token(lin.text)


def test_tag_tokens_never_in_corpus_vocabulary(house_samples):
    corpus = Vocabulary.build([s.reference for s in house_samples])
    assert [corpus.itos.count(t) for t in HAL_TOKENS] == [1, 1, 1]
    corpus_tokens = {t for s in house_samples for t in split_tokens(s.reference)}
    assert not corpus_tokens & set(HAL_TOKENS)


def test_hal_parse_forms():
    for form in ("Hal_low", "hal_low", "low", "<hal_low>"):
        assert Hal.parse(form) is Hal.LOW
    with pytest.raises(ValueError):
        Hal.parse("extreme")
