"""Positive and negative sample construction for the contrastive objective.

Positives are paraphrases of the anchor reference (back-translation in a
full setup, a seeded offline paraphraser here). Negatives are references of
other graphs, picked either uniformly or with the house major-feature rule.
"""
from __future__ import annotations

import json
import logging
import random
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .kg_data import KGGraph, TextSample

logger = logging.getLogger(__name__)

DEFAULT_POSITIVES = 2
DEFAULT_NEGATIVES = 4


class ParaphraseError(RuntimeError):
    pass


class SamplingError(ValueError):
    pass


class Paraphraser(Protocol):
    def __call__(self, text: str, seed: int) -> str: ...


def derive_seed(*parts: object) -> int:
    """Stable 32-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    return zlib.crc32("\x1f".join(map(str, parts)).encode("utf-8"))


DEFAULT_SYNONYMS: dict[str, tuple[str, ...]] = {
    "has": ("features", "offers", "includes"),
    "features": ("has", "offers"),
    "offers": ("has", "provides"),
    "includes": ("has", "contains"),
    "located": ("situated", "found"),
    "situated": ("located",),
    "property": ("home", "residence"),
    "home": ("property", "residence"),
    "nearby": ("close by", "in the vicinity"),
    "close": ("near",),
    "near": ("close to",),
    "also": ("additionally", "as well"),
    "large": ("spacious", "big"),
    "spacious": ("large", "roomy"),
    "beautiful": ("lovely", "charming"),
    "lovely": ("beautiful", "delightful"),
    "modern": ("contemporary", "updated"),
    "quiet": ("peaceful", "calm"),
}

_SENT_RE = re.compile(r"[^.!?]+[.!?]*")
_WORD_SPLIT = re.compile(r"(\W+)")


@dataclass
class OfflineParaphraser:
    """Deterministic paraphraser: synonym substitution plus sentence reordering.

    Only words listed in ``synonyms`` are ever rewritten, so mentions of
    graph entities survive as long as the table stays clear of them.
    """

    synonyms: Mapping[str, Sequence[str]] = field(default_factory=lambda: dict(DEFAULT_SYNONYMS))
    reorder: bool = True
    substitution_rate: float = 0.5

    def __call__(self, text: str, seed: int) -> str:
        rng = random.Random(seed)
        sentences = [s.strip() for s in _SENT_RE.findall(text) if s.strip()]
        if not sentences:
            return text
        if self.reorder and len(sentences) > 1:
            rng.shuffle(sentences)
        out = []
        for sent in sentences:
            pieces = _WORD_SPLIT.split(sent)
            for i, piece in enumerate(pieces):
                key = piece.lower()
                options = self.synonyms.get(key)
                if options and rng.random() < self.substitution_rate:
                    choice = options[rng.randrange(len(options))]
                    pieces[i] = choice.capitalize() if piece[:1].isupper() else choice
            out.append("".join(pieces))
        return " ".join(out)


class RemoteParaphraser:
    """Round-trip translation through an HTTP service.

    The service takes ``{"text", "source", "pivot", "seed"}`` and answers
    ``{"text": ...}``; ``endpoint`` and ``timeout`` come from the run config.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, pivot: str = "de"):
        self.endpoint = endpoint
        self.timeout = timeout
        self.pivot = pivot

    def __call__(self, text: str, seed: int) -> str:
        import httpx

        try:
            resp = httpx.post(self.endpoint, timeout=self.timeout,
                              json={"text": text, "source": "en", "pivot": self.pivot, "seed": seed})
            resp.raise_for_status()
            return resp.json()["text"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise ParaphraseError(f"back-translation via {self.endpoint} failed: {exc}") from exc


def make_positives(anchor: TextSample, paraphraser: Paraphraser, count: int = DEFAULT_POSITIVES,
                   seed: int = 0) -> list[str]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if not anchor.reference:
        raise SamplingError(f"anchor {anchor.id!r} has no reference text")
    return [paraphraser(anchor.reference, derive_seed(seed, anchor.id, "pos", k)) for k in range(count)]


def _others(anchor: TextSample, pool: Iterable[TextSample], count: int) -> list[TextSample]:
    # sorted by id so that the draw does not depend on pool order
    others = sorted((s for s in pool if s.id != anchor.id and s.reference), key=lambda s: s.id)
    if len(others) < count:
        raise SamplingError(f"need {count} negatives for {anchor.id!r} but only {len(others)} "
                            "other samples are available")
    return others


def make_negatives_random(anchor: TextSample, pool: Sequence[TextSample], count: int = DEFAULT_NEGATIVES,
                          seed: int = 0) -> list[tuple[str, str]]:
    others = _others(anchor, pool, count)
    rng = random.Random(derive_seed(seed, anchor.id, "neg"))
    return [(s.id, s.reference) for s in rng.sample(others, count)]


MAJOR_FEATURES = ("location", "address", "bedrooms", "bathrooms", "parking_spaces", "property_type")

HOUSE_FEATURE_RELATIONS: dict[str, str] = {
    "location": "house_location",
    "address": "house_address",
    "bedrooms": "bedrooms",
    "bathrooms": "bathrooms",
    "parking_spaces": "parking_spaces",
    "property_type": "house_property-type",
}


@dataclass(frozen=True)
class MajorFeatureProfile:
    location: str | None = None
    address: str | None = None
    bedrooms: str | None = None
    bathrooms: str | None = None
    parking_spaces: str | None = None
    property_type: str | None = None

    @classmethod
    def from_graph(cls, graph: KGGraph,
                   relations: Mapping[str, str] = HOUSE_FEATURE_RELATIONS) -> "MajorFeatureProfile":
        values = {}
        for feature, label in relations.items():
            tails = [t for _, r, t in graph.triples if r == label]
            # several competing values make the feature ambiguous; treat as absent
            values[feature] = tails[0] if len(tails) == 1 else None
        return cls(**values)

    def as_dict(self) -> dict[str, str | None]:
        return {f: getattr(self, f) for f in MAJOR_FEATURES}


def house_eligible(a: MajorFeatureProfile, b: MajorFeatureProfile, min_shared: int = 4) -> bool:
    """True if at least ``min_shared`` features are present in both and all of those differ."""
    da, db = a.as_dict(), b.as_dict()
    shared = [f for f in MAJOR_FEATURES if da[f] is not None and db[f] is not None]
    return len(shared) >= min_shared and all(da[f] != db[f] for f in shared)


def make_negatives_house(anchor: TextSample, pool: Sequence[TextSample], count: int = DEFAULT_NEGATIVES,
                         seed: int = 0, min_shared: int = 4,
                         relations: Mapping[str, str] = HOUSE_FEATURE_RELATIONS) -> list[tuple[str, str]]:
    others = _others(anchor, pool, count)
    ref = MajorFeatureProfile.from_graph(anchor.graph, relations)
    eligible = [s for s in others
                if house_eligible(ref, MajorFeatureProfile.from_graph(s.graph, relations), min_shared)]
    rng = random.Random(derive_seed(seed, anchor.id, "neg-house"))
    if len(eligible) >= count:
        chosen = rng.sample(eligible, count)
    else:
        chosen = list(eligible)
        taken = {s.id for s in chosen}
        rest = [s for s in others if s.id not in taken]
        chosen += rng.sample(rest, count - len(chosen))
        logger.debug("anchor %s: %d eligible house negatives, topped up with %d random",
                     anchor.id, len(eligible), count - len(eligible))
    return [(s.id, s.reference) for s in chosen]


@dataclass(frozen=True)
class ContrastiveSet:
    anchor_id: str
    positives: tuple[str, ...]
    negatives: tuple[tuple[str, str], ...]

    def to_json(self) -> dict:
        return {"anchor_id": self.anchor_id, "positives": list(self.positives),
                "negatives": [{"id": i, "text": t} for i, t in self.negatives]}

    @classmethod
    def from_json(cls, obj: dict) -> "ContrastiveSet":
        return cls(obj["anchor_id"], tuple(obj["positives"]),
                   tuple((n["id"], n["text"]) for n in obj["negatives"]))


def build_contrastive_sets(samples: Sequence[TextSample], paraphraser: Paraphraser | None = None,
                           n_positives: int = DEFAULT_POSITIVES, n_negatives: int = DEFAULT_NEGATIVES,
                           heuristic: str = "random", seed: int = 0) -> list[ContrastiveSet]:
    """One ContrastiveSet per sample, negatives fixed for the whole run."""
    paraphraser = paraphraser or OfflineParaphraser()
    if heuristic not in ("random", "house"):
        raise ValueError(f"unknown negative heuristic {heuristic!r}")
    pick = make_negatives_house if heuristic == "house" else make_negatives_random
    sets = []
    for anchor in samples:
        pos = make_positives(anchor, paraphraser, n_positives, seed)
        neg = pick(anchor, samples, n_negatives, seed)
        sets.append(ContrastiveSet(anchor.id, tuple(pos), tuple(neg)))
    return sets


def write_contrastive_sets(sets: Iterable[ContrastiveSet], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for cs in sets:
            fh.write(json.dumps(cs.to_json(), ensure_ascii=False) + "\n")


def read_contrastive_sets(path: str | Path) -> list[ContrastiveSet]:
    with Path(path).open(encoding="utf-8") as fh:
        return [ContrastiveSet.from_json(json.loads(line)) for line in fh if line.strip()]
