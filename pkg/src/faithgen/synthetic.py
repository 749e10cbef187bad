"""Synthetic corpora standing in for the House data: a house-listing corpus, a
hallucination-steering corpus, and a judge fixture with known fact tables."""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .kg_data import KGGraph, TextSample, linearize

HEAD = "house"

SALIENT_RELATIONS = (
    "house_location", "house_property-type", "bedrooms", "bathrooms", "parking_spaces",
    "has_ac", "has_dining", "has_heating", "garage_spaces", "nearest_train_station",
)

EXTRA_RELATIONS = (
    "has_pool", "has_gym", "has_balcony", "has_garden", "has_fireplace", "has_dishwasher",
    "has_laundry", "has_study", "has_ensuite", "has_alarm", "has_intercom", "has_shed",
    "has_deck", "has_courtyard", "has_solar", "has_rainwater_tank", "has_spa", "has_sauna",
    "has_tennis_court", "has_walk_in_robe", "has_built_in_robes", "has_floorboards", "has_carpet",
    "has_ducted_cooling", "has_split_system", "has_lift", "has_storage", "has_workshop",
    "has_cellar", "has_attic", "has_pergola", "has_outdoor_kitchen", "has_bbq_area",
    "has_vegetable_garden", "has_irrigation", "has_pet_door", "has_water_view", "has_city_view",
    "land_size", "floor_area", "year_built", "council_rates", "water_rates", "strata_levies",
    "nearest_school", "nearest_park", "nearest_shops", "nearest_hospital", "nearest_beach",
    "bus_route", "zoning", "aspect", "storeys", "energy_rating", "agent_name", "agency",
    "listing_status",
)

ALL_HOUSE_RELATIONS = SALIENT_RELATIONS + ("house_address",) + EXTRA_RELATIONS

SUBURBS = ("brighton", "carlton", "fitzroy", "hawthorn", "kew", "richmond", "preston", "coburg",
           "footscray", "elwood", "malvern", "toorak", "camberwell", "box hill", "doncaster",
           "ringwood", "frankston", "geelong", "sunbury", "werribee")
STREETS = ("smith street", "high street", "church road", "park avenue", "station street",
           "albert road", "king street", "queen parade", "elm grove", "river drive")
PROPERTY_TYPES = ("house", "apartment", "townhouse", "unit", "villa")
STATIONS = ("flinders street", "southern cross", "parliament", "richmond station", "jolimont",
            "north melbourne", "caulfield", "clifton hill")


def _house_value(rel: str, rng: random.Random) -> str:
    if rel == "house_location":
        return rng.choice(SUBURBS)
    if rel == "house_address":
        return f"{rng.randint(1, 400)} {rng.choice(STREETS)}"
    if rel == "house_property-type":
        return rng.choice(PROPERTY_TYPES)
    if rel == "bedrooms":
        return str(rng.randint(1, 6))
    if rel == "bathrooms":
        return str(rng.randint(1, 4))
    if rel in ("parking_spaces", "garage_spaces"):
        return str(rng.randint(1, 4))
    if rel == "nearest_train_station":
        return rng.choice(STATIONS)
    if rel.startswith("has_"):
        return "yes"
    return f"{rel.replace('_', ' ')} {rng.randint(1, 9)}"


def _house_sentence(rel: str, value: str) -> str:
    templates = {
        "house_location": "The house is located in {v}.",
        "house_address": "It is at {v}.",
        "house_property-type": "The property is a {v}.",
        "bedrooms": "It has {v} bedrooms.",
        "bathrooms": "There are {v} bathrooms.",
        "parking_spaces": "It offers {v} parking spaces.",
        "garage_spaces": "The garage fits {v} cars.",
        "nearest_train_station": "The nearest station is {v}.",
    }
    if rel in templates:
        return templates[rel].format(v=value)
    if rel.startswith("has_"):
        return f"It has {rel[4:].replace('_', ' ')}."
    return f"The {rel.replace('_', ' ')} is {value}."


HALLUCINATED_SENTENCES = (
    "The roof was replaced recently.",
    "Buyers will adore the sunny balcony.",
    "A wine cellar sits beneath the kitchen.",
    "The owners are relocating overseas.",
    "Cafes and boutiques line the nearby strip.",
    "Marble benchtops grace every bathroom.",
    "An auction is scheduled next month.",
    "Original artwork decorates the hallway.",
    "Solar panels slash electricity bills.",
    "Children walk safely to the local primary school.",
    "Neighbours describe the street as friendly.",
    "Huge windows flood rooms with sunlight.",
    "Vaulted ceilings create grand proportions.",
    "Premium appliances complete the kitchen.",
    "Established gardens surround the block.",
    "Heritage features were carefully restored.",
    "Inspection is strictly by appointment.",
    "Investors enjoy strong rental demand.",
    "Quality carpets warm the bedrooms.",
    "Security cameras monitor the entrance.",
)


def make_house_corpus(n: int = 300, seed: int = 0, hallucination_rate: float = 0.5,
                      split: str = "train", id_prefix: str = "house") -> list[TextSample]:
    """House-listing graphs over 68 relation labels with strictly decreasing label frequency.

    Each relation is attached to an exact number of houses, so the frequency
    ranking of labels is fixed by construction (salient relations first).
    """
    rng = random.Random(seed)
    n_rel = len(ALL_HOUSE_RELATIONS)
    # frequencies from 0.99 down to ~0.05, spaced so counts stay distinct for n >= 50
    freqs = [0.99 - 0.02 * i for i in range(11)] + [0.75 - 0.0125 * i for i in range(n_rel - 11)]
    members: dict[str, set[int]] = {}
    for rel, f in zip(ALL_HOUSE_RELATIONS, freqs):
        members[rel] = set(rng.sample(range(n), max(1, round(f * n))))
    samples = []
    for i in range(n):
        rels = [r for r in ALL_HOUSE_RELATIONS if i in members[r]]
        if not rels:
            rels = ["house_location"]
        triples = [(HEAD, r, _house_value(r, rng)) for r in rels]
        sentences = [_house_sentence(r, v) for _, r, v in triples]
        if rng.random() < hallucination_rate:
            for _ in range(rng.randint(1, 3)):
                sentences.insert(rng.randint(0, len(sentences)), rng.choice(HALLUCINATED_SENTENCES))
        samples.append(TextSample(f"{id_prefix}-{i:05d}", KGGraph.from_triples(triples),
                                  " ".join(sentences), split))
    return samples


# -- steering corpus ---------------------------------------------------------

STEER_RELATIONS: dict[str, tuple[str, tuple[str, ...]]] = {
    "bedrooms": ("It has {v} bedrooms .", ("1", "2", "3", "4", "5", "6")),
    "bathrooms": ("It has {v} bathrooms .", ("1", "2", "3", "4")),
    "garages": ("It has {v} garages .", ("1", "2", "3")),
    "location": ("The house is in {v} .", SUBURBS[:12]),
    "style": ("The style is {v} .", ("modern", "victorian", "edwardian", "federation", "art deco")),
    "heating": ("The heating is {v} .", ("gas", "electric", "ducted", "hydronic")),
    "flooring": ("The flooring is {v} .", ("timber", "carpet", "tile", "concrete")),
    "garden": ("The garden is {v} .", ("front", "rear", "courtyard", "rooftop")),
    "outlook": ("The outlook is {v} .", ("city", "park", "water", "mountain")),
    "station": ("The station is {v} .", ("flinders", "parliament", "jolimont", "caulfield", "clifton")),
    "storeys": ("It has {v} storeys .", ("1", "2", "3")),
    "pool": ("The pool is {v} .", ("saltwater", "heated", "plunge", "lap")),
}


@dataclass
class SteeringSample:
    sample: TextSample
    level: str
    n_injected: int


def make_steering_corpus(n: int = 2000, seed: int = 0, id_prefix: str = "steer",
                         split: str = "train") -> list[SteeringSample]:
    """Graphs of 4-8 triples; references are faithful (1/3), carry 1-2 unsupported
    sentences (1/3) or 3-4 unsupported sentences (1/3)."""
    rng = random.Random(seed)
    rel_names = sorted(STEER_RELATIONS)
    out = []
    for i in range(n):
        k = rng.randint(4, 8)
        rels = rng.sample(rel_names, k)
        triples = [(HEAD, r, rng.choice(STEER_RELATIONS[r][1])) for r in rels]
        sentences = [STEER_RELATIONS[r][0].format(v=v) for _, r, v in triples]
        level = rng.choice(("low", "medium", "high"))
        n_inj = {"low": 0, "medium": rng.randint(1, 2), "high": rng.randint(3, 4)}[level]
        for s in rng.sample(HALLUCINATED_SENTENCES, n_inj):
            sentences.insert(rng.randint(0, len(sentences)), s.replace(".", " ."))
        sample = TextSample(f"{id_prefix}-{i:05d}", KGGraph.from_triples(triples), " ".join(sentences), split)
        out.append(SteeringSample(sample, level, n_inj))
    return out


# -- judge fixture -------------------------------------------------------------

@dataclass
class FactFixture:
    """Ground-truth fact tables for one sample plus the raw judge responses they render to."""

    id: str
    graph: KGGraph
    output: str
    input_facts: list[str]
    included: dict[str, bool]
    extrinsic: list[str]
    intrinsic: list[str]
    fluency: int
    responses: dict = field(default_factory=dict)

    @property
    def linearized(self) -> str:
        return linearize(self.graph).text


def _render_list(items: list[str], rng: random.Random) -> str:
    if not items:
        return rng.choice(["None", "None.", "No such features."])
    style = rng.choice(["num", "paren", "dash", "star"])
    lines = []
    for i, it in enumerate(items, start=1):
        marker = {"num": f"{i}.", "paren": f"{i})", "dash": "-", "star": "*"}[style]
        lines.append(f"{marker} {it}")
    if rng.random() < 0.4:
        lines.insert(0, rng.choice(["Here are the features:", "Features:", "The features are:"]))
    return "\n".join(lines)


def make_fact_fixture(n: int = 50, seed: int = 0) -> list[FactFixture]:
    """Samples whose judge answers are fully specified, with duplicates, preambles and
    unclear answers mixed in. Counts derivable from the tables alone:
    input = len(input_facts), common = sum(included), hallucinated = |extrinsic U intrinsic|
    (case-insensitive)."""
    rng = random.Random(seed)
    houses = make_house_corpus(max(n, 60), seed=seed + 1, hallucination_rate=0.0, split="test")
    fixtures = []
    for i in range(n):
        graph = houses[i].graph
        facts = [f"{r}: {t}" for _, r, t in graph.triples]
        included = {f: rng.random() < 0.6 for f in facts}
        pool = list(HALLUCINATED_SENTENCES)
        rng.shuffle(pool)
        ext = pool[: rng.randint(0, 4)]
        intr = [f"{r}: contradicts {t}" for _, r, t in rng.sample(graph.triples, rng.randint(0, 2))]
        if ext and rng.random() < 0.5:
            intr.append(ext[0].upper())  # same fact in both lists, different case
        if i % 17 == 5:
            # degenerate: output with no facts at all
            included = {f: False for f in facts}
            ext, intr = [], []
        kept = [f for f in facts if included[f]]
        output = " ".join([f"The {f.split(':')[0].replace('_', ' ')} is {f.split(': ', 1)[1]}." for f in kept] + ext)
        fx = FactFixture(f"fx-{i:03d}", graph, output, facts, included, ext, intr, rng.randint(1, 5))

        listed = list(facts)
        if rng.random() < 0.3 and facts:
            listed.insert(rng.randint(0, len(listed)), facts[0].upper())
        common = {}
        for f in facts:
            if included[f]:
                common[f] = rng.choice(["Yes.", "yes", "YES, it is mentioned.", "Yes - the output states it."])
            else:
                common[f] = rng.choice(["No.", "no", "No, it is not mentioned.", "Unclear from the text."])
        fx.responses = {
            "output": output,
            "input_response": _render_list(listed, rng),
            "common": common,
            "extrinsic_response": _render_list(ext, rng),
            "intrinsic_response": _render_list(intr, rng),
            "fluency": fx.fluency,
        }
        fixtures.append(fx)
    return fixtures


def fixture_table(fixtures: list[FactFixture]) -> dict[str, dict]:
    return {fx.linearized: fx.responses for fx in fixtures}
