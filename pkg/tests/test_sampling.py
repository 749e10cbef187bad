import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faithgen.kg_data import KGGraph, TextSample
from faithgen.sampling import (MAJOR_FEATURES, ContrastiveSet, MajorFeatureProfile, OfflineParaphraser,
                               SamplingError, build_contrastive_sets, house_eligible, make_negatives_house,
                               make_negatives_random, make_positives, read_contrastive_sets,
                               write_contrastive_sets)
from faithgen.synthetic import make_house_corpus


def test_identity_paraphraser_returns_anchor(small_samples):
    p = OfflineParaphraser(synonyms={}, reorder=False)
    assert make_positives(small_samples[0], p, count=2) == [small_samples[0].reference] * 2


def test_paraphrase_deterministic():
    p = OfflineParaphraser()
    text = "The home is located near the park. It has a large garden. Also quiet."
    assert p(text, 7) == p(text, 7)


def test_positives_count_and_distinct_seeds(house_samples):
    p = OfflineParaphraser()
    pos = make_positives(house_samples[0], p, count=3, seed=1)
    assert len(pos) == 3
    assert make_positives(house_samples[0], p, count=3, seed=1) == pos


def test_positive_count_must_be_positive(small_samples):
    with pytest.raises(ValueError):
        make_positives(small_samples[0], OfflineParaphraser(), count=0)


def _entity_mentions(text, entities):
    low = text.lower()
    return Counter({e: low.count(e.lower()) for e in entities})


def test_paraphrase_preserves_entity_mentions(house_samples):
    p = OfflineParaphraser(substitution_rate=1.0)
    for s in house_samples:
        ents = [e for e in s.graph.entities if e not in ("yes",)]
        for k in range(2):
            out = p(s.reference, k)
            assert _entity_mentions(out, ents) == _entity_mentions(s.reference, ents), s.id


def test_negatives_forced_cardinality(small_samples):
    anchor = small_samples[0]
    pool = small_samples[:5]  # anchor + exactly count others
    ids = {i for i, _ in make_negatives_random(anchor, pool, count=4, seed=3)}
    assert ids == {"b", "c", "d", "e"}


def test_negatives_insufficient_pool(small_samples):
    with pytest.raises(SamplingError, match="need 4.*only 2"):
        make_negatives_random(small_samples[0], small_samples[:3], count=4)


def test_anchor_never_sampled_over_1000_draws(house_samples):
    anchor = house_samples[0]
    for seed in range(1000):
        ids = [i for i, _ in make_negatives_random(anchor, house_samples, 4, seed)]
        assert anchor.id not in ids
        assert len(set(ids)) == 4


def test_negatives_seed_reproducible_and_pool_order_invariant(house_samples):
    a = make_negatives_random(house_samples[3], house_samples, 4, seed=11)
    shuffled = list(house_samples)
    random.Random(0).shuffle(shuffled)
    assert make_negatives_random(house_samples[3], shuffled, 4, seed=11) == a


def test_negatives_roughly_uniform(small_samples):
    # 5 others, choose 4: each other id should be picked 4/5 of the time
    counts = Counter()
    n = 2000
    for seed in range(n):
        counts.update(i for i, _ in make_negatives_random(small_samples[0], small_samples, 4, seed))
    for sid in "bcdef":
        assert abs(counts[sid] / n - 0.8) < 0.04


def _house(sid, **feats):
    rel = {"location": "house_location", "address": "house_address", "bedrooms": "bedrooms",
           "bathrooms": "bathrooms", "parking_spaces": "parking_spaces", "property_type": "house_property-type"}
    triples = [("h", rel[k], v) for k, v in feats.items()]
    return TextSample(sid, KGGraph.from_triples(triples), f"text of {sid}")


BASE = dict(location="kew", address="1 a st", bedrooms="3", bathrooms="2", parking_spaces="1",
            property_type="house")
OTHER = dict(location="carlton", address="9 b st", bedrooms="4", bathrooms="1", parking_spaces="2",
             property_type="unit")


def test_all_six_differ_is_eligible():
    a = MajorFeatureProfile.from_graph(_house("a", **BASE).graph)
    b = MajorFeatureProfile.from_graph(_house("b", **OTHER).graph)
    assert house_eligible(a, b)


def test_shared_bedrooms_is_ineligible():
    a = MajorFeatureProfile.from_graph(_house("a", **BASE).graph)
    b = MajorFeatureProfile.from_graph(_house("b", **{**OTHER, "bedrooms": "3"}).graph)
    assert not house_eligible(a, b)


def test_fewer_than_four_shared_is_ineligible():
    a = MajorFeatureProfile.from_graph(_house("a", location="kew", bedrooms="3", bathrooms="2").graph)
    b = MajorFeatureProfile.from_graph(_house("b", **OTHER).graph)
    assert not house_eligible(a, b)


def test_ambiguous_feature_counts_as_absent():
    g = KGGraph.from_triples([("h", "bedrooms", "3"), ("h", "bedrooms", "4"), ("h", "bathrooms", "1")])
    prof = MajorFeatureProfile.from_graph(g)
    assert prof.bedrooms is None and prof.bathrooms == "1"


def _brute_eligible(a, b):
    pa, pb = MajorFeatureProfile.from_graph(a.graph), MajorFeatureProfile.from_graph(b.graph)
    both = [f for f in MAJOR_FEATURES if getattr(pa, f) is not None and getattr(pb, f) is not None]
    if len(both) < 4:
        return False
    for f in both:
        if getattr(pa, f) == getattr(pb, f):
            return False
    return True


def test_eligibility_matches_brute_force_and_is_symmetric(house_samples):
    profiles = {s.id: MajorFeatureProfile.from_graph(s.graph) for s in house_samples}
    n_eligible = 0
    for a in house_samples:
        for b in house_samples:
            got = house_eligible(profiles[a.id], profiles[b.id])
            assert got == _brute_eligible(a, b)
            assert got == house_eligible(profiles[b.id], profiles[a.id])
            n_eligible += got
    assert n_eligible > 0


def test_house_negatives_prefer_eligible(house_samples):
    anchor = house_samples[0]
    prof = MajorFeatureProfile.from_graph(anchor.graph)
    eligible = {s.id for s in house_samples[1:] if house_eligible(prof, MajorFeatureProfile.from_graph(s.graph))}
    got = [i for i, _ in make_negatives_house(anchor, house_samples, 4, seed=0)]
    assert len(got) == 4 and len(set(got)) == 4 and anchor.id not in got
    if len(eligible) >= 4:
        assert set(got) <= eligible
    else:
        assert eligible <= set(got)


def test_house_negatives_top_up_when_none_eligible():
    pool = [_house(f"s{i}", **BASE) for i in range(6)]  # identical features: nothing eligible
    got = make_negatives_house(pool[0], pool, 4, seed=0)
    assert len(got) == 4 and "s0" not in {i for i, _ in got}


@settings(max_examples=30)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 10_000), st.sampled_from(["random", "house"]))
def test_contrastive_set_invariants(n_pos, n_neg, seed, heuristic):
    samples = make_house_corpus(20, seed=seed % 7)
    sets = build_contrastive_sets(samples, OfflineParaphraser(), n_pos, n_neg, heuristic, seed)
    for s, cs in zip(samples, sets):
        assert cs.anchor_id == s.id
        assert len(cs.positives) == n_pos and len(cs.negatives) == n_neg
        assert s.id not in {i for i, _ in cs.negatives}
    shuffled = list(samples)
    random.Random(seed).shuffle(shuffled)
    again = {cs.anchor_id: cs for cs in build_contrastive_sets(shuffled, OfflineParaphraser(), n_pos, n_neg,
                                                                heuristic, seed)}
    assert all(again[cs.anchor_id] == cs for cs in sets)


def test_contrastive_jsonl_round_trip(tmp_path, house_samples):
    sets = build_contrastive_sets(house_samples[:10], seed=2)
    write_contrastive_sets(sets, tmp_path / "c.jsonl")
    assert read_contrastive_sets(tmp_path / "c.jsonl") == sets
    first = (tmp_path / "c.jsonl").read_text().splitlines()[0]
    assert set(ContrastiveSet.from_json(__import__("json").loads(first)).to_json()) == {
        "anchor_id", "positives", "negatives"}
