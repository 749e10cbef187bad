import string

import pytest
import torch
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from faithgen.kg_data import KGGraph, TextSample, Vocabulary
from faithgen.model import ModelConfig, Seq2Seq

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# field text: printable, no surrounding whitespace, never containing a marker
_alphabet = string.ascii_letters + string.digits + " _-.,'<>/"
field_text = (st.text(_alphabet, min_size=1, max_size=12)
              .map(str.strip)
              .filter(lambda s: s and not any(m in s for m in ("<H>", "<R>", "<T>"))))


@st.composite
def graphs(draw, min_triples=1, max_triples=8):
    n = draw(st.integers(min_triples, max_triples))
    triples = draw(st.lists(st.tuples(field_text, field_text, field_text), min_size=n, max_size=n,
                            unique=True))
    return KGGraph.from_triples(triples)


def tiny_model(vocab_size=40, dtype=torch.float32, seed=0, **kw) -> Seq2Seq:
    torch.manual_seed(seed)
    params = dict(embed_dim=16, hidden_dim=16, ffn_dim=32, num_layers=2, num_heads=2, dropout=0.0,
                  max_source_len=64, max_target_len=32)
    params.update(kw)
    return Seq2Seq(ModelConfig(vocab_size, **params)).to(dtype)


@pytest.fixture
def house_samples():
    from faithgen.synthetic import make_house_corpus

    return make_house_corpus(60, seed=3)


@pytest.fixture
def small_samples():
    rows = [
        ("a", [("house", "bedrooms", "3"), ("house", "location", "kew")], "It has 3 bedrooms in Kew."),
        ("b", [("flat", "bedrooms", "1")], "A flat with one bedroom."),
        ("c", [("villa", "pool", "yes"), ("villa", "bathrooms", "2")], "The villa has a pool."),
        ("d", [("unit", "location", "carlton")], "A unit in Carlton. Close to shops."),
        ("e", [("house", "garages", "2")], "Two garages."),
        ("f", [("cottage", "style", "victorian")], "A Victorian cottage!"),
    ]
    return [TextSample(i, KGGraph.from_triples(t), ref) for i, t, ref in rows]


@pytest.fixture
def small_vocab(small_samples):
    return Vocabulary.from_samples(small_samples)
