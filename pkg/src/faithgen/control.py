"""Faithfulness scoring, three-way bucketing and control-token handling."""
from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .kg_data import HAL_TOKENS, LinearizedGraph, split_tokens

N_BUCKETS = 3

DEFAULT_STOPWORDS = frozenset("""
a an the and or but of in on at to for from by with without as is are was were be been being
it its this that these those there here has have had having do does did will would can could
should may might must shall also very just so than then too not no nor only own same such
which who whom whose what when where why how all any both each few more most other some
into onto over under again further once about above below between through during before after
up down out off i me my we our you your he him his she her they them their
""".split())


class Hal(enum.Enum):
    """Hallucination level used as a control feature token."""

    LOW = "Hal_low"
    MEDIUM = "Hal_medium"
    HIGH = "Hal_high"

    @property
    def token(self) -> str:
        return HAL_TOKENS[list(Hal).index(self)]

    @classmethod
    def from_token(cls, token: str) -> "Hal":
        try:
            return list(Hal)[HAL_TOKENS.index(token)]
        except ValueError:
            raise ValueError(f"not a hallucination tag token: {token!r}") from None

    @classmethod
    def parse(cls, value: str) -> "Hal":
        """Accept ``Hal_low``, ``hal_low``, ``low`` or ``<hal_low>``."""
        v = value.strip().lower().strip("<>")
        if not v.startswith("hal_"):
            v = "hal_" + v
        for tag in cls:
            if tag.value.lower() == v:
                return tag
        raise ValueError(f"unknown hallucination tag {value!r}")


class Scorer(Protocol):
    name: str

    def __call__(self, linearized: str, text: str) -> float: ...


class ScoringError(ValueError):
    pass


class LexicalOverlapScorer:
    """Share of content-token occurrences in the text that also occur in the graph.

    Counts occurrences, not types, so every unsupported token added to a
    text lowers the score.
    """

    name = "lexical_overlap"

    def __init__(self, stopwords: Iterable[str] = DEFAULT_STOPWORDS):
        self.stopwords = frozenset(w.lower() for w in stopwords)

    @classmethod
    def from_file(cls, path: str | Path) -> "LexicalOverlapScorer":
        words = [w.strip() for w in Path(path).read_text(encoding="utf-8").splitlines()]
        return cls([w for w in words if w and not w.startswith("#")])

    def content_tokens(self, text: str) -> list[str]:
        return [t for t in split_tokens(text)
                if t not in self.stopwords and any(c.isalnum() for c in t)]

    def __call__(self, linearized: str, text: str) -> float:
        content = self.content_tokens(text)
        if not content:
            raise ScoringError("text has no content tokens; overlap ratio undefined")
        graph_tokens = set(split_tokens(linearized, specials=True))
        return sum(t in graph_tokens for t in content) / len(content)


class BARTScoreAdapter:
    """Log-likelihood of the text given the linearized graph under a BART checkpoint.

    Mirrors BARTScore's faithfulness direction (source -> text). Needs the
    checkpoint to be available locally or downloadable.
    """

    def __init__(self, checkpoint: str = "facebook/bart-large-cnn", device: str = "cpu",
                 max_length: int = 1024):
        self.name = f"bartscore:{checkpoint}"
        self.checkpoint = checkpoint
        self.device = device
        self.max_length = max_length
        self._model = None
        self._tok = None

    def _load(self):
        from transformers import BartForConditionalGeneration, BartTokenizer

        self._tok = BartTokenizer.from_pretrained(self.checkpoint)
        self._model = BartForConditionalGeneration.from_pretrained(self.checkpoint).to(self.device).eval()

    def __call__(self, linearized: str, text: str) -> float:
        import torch

        if self._model is None:
            self._load()
        src = self._tok(linearized, max_length=self.max_length, truncation=True, return_tensors="pt")
        tgt = self._tok(text, max_length=self.max_length, truncation=True, return_tensors="pt")
        with torch.no_grad():
            out = self._model(input_ids=src.input_ids.to(self.device),
                              attention_mask=src.attention_mask.to(self.device),
                              labels=tgt.input_ids.to(self.device))
        return -float(out.loss)


SCORERS = {"lexical_overlap": LexicalOverlapScorer, "bartscore": BARTScoreAdapter}


def make_scorer(name: str, stopwords_path: str | None = None, **kwargs) -> Scorer:
    if name == "lexical_overlap":
        return LexicalOverlapScorer.from_file(stopwords_path) if stopwords_path else LexicalOverlapScorer()
    if name == "bartscore":
        return BARTScoreAdapter(**kwargs)
    raise ValueError(f"unknown scorer {name!r}; choose from {sorted(SCORERS)}")


@dataclass(frozen=True)
class FaithfulnessScore:
    sample_id: str
    score: float
    scorer_name: str

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ScoringError(f"non-finite score for {self.sample_id!r}: {self.score}")


def score_faithfulness(sample_id: str, linearized: LinearizedGraph, text: str,
                       scorer: Scorer) -> FaithfulnessScore:
    if not text or not text.strip():
        raise ScoringError(f"{sample_id}: empty text")
    return FaithfulnessScore(sample_id, float(scorer(linearized.text, text)), scorer.name)


@dataclass(frozen=True)
class BucketEntry:
    tag: Hal
    score: float
    boundaries: tuple[float, float]


@dataclass
class BucketAssignment:
    entries: dict[str, BucketEntry]
    scorer_name: str

    def tag_of(self, sample_id: str) -> Hal:
        return self.entries[sample_id].tag

    def sizes(self) -> dict[Hal, int]:
        counts = Counter(e.tag for e in self.entries.values())
        return {tag: counts.get(tag, 0) for tag in Hal}

    def to_records(self) -> list[dict]:
        return [{"id": sid, "score": e.score, "scorer": self.scorer_name, "tag": e.tag.value}
                for sid, e in self.entries.items()]

    def write(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in self.to_records():
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "BucketAssignment":
        with Path(path).open(encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        return assign_buckets([FaithfulnessScore(r["id"], r["score"], r["scorer"]) for r in records])


def assign_buckets(scores: Sequence[FaithfulnessScore]) -> BucketAssignment:
    """Split scores into three near-equal buckets, most faithful first.

    Order is (score descending, id ascending); with ``n = 3q + r`` the first
    ``r`` buckets get ``q + 1`` samples.
    """
    n = len(scores)
    if n < N_BUCKETS:
        raise ValueError(f"need at least {N_BUCKETS} scores to bucket, got {n}")
    names = {s.scorer_name for s in scores}
    if len(names) != 1:
        raise ValueError(f"scores from several scorers cannot be bucketed together: {sorted(names)}")
    ids = [s.sample_id for s in scores]
    if len(set(ids)) != n:
        raise ValueError("duplicate sample ids in score list")

    ranked = sorted(scores, key=lambda s: (-s.score, s.sample_id))
    q, r = divmod(n, N_BUCKETS)
    sizes = [q + 1 if b < r else q for b in range(N_BUCKETS)]
    cut1, cut2 = sizes[0], sizes[0] + sizes[1]
    # lowest score admitted to the low and medium buckets
    boundaries = (ranked[cut1 - 1].score, ranked[cut2 - 1].score)
    entries: dict[str, BucketEntry] = {}
    for i, s in enumerate(ranked):
        tag = Hal.LOW if i < cut1 else Hal.MEDIUM if i < cut2 else Hal.HIGH
        entries[s.sample_id] = BucketEntry(tag, s.score, boundaries)
    return BucketAssignment(entries, names.pop())


def apply_control_token(linearized: LinearizedGraph | str, tag: Hal) -> str:
    text = linearized.text if isinstance(linearized, LinearizedGraph) else linearized
    return f"{tag.token} {text}"


def strip_control_token(source: str) -> tuple[Hal, str]:
    token, _, rest = source.partition(" ")
    return Hal.from_token(token), rest


def has_control_token(source: str) -> bool:
    return source.split(" ", 1)[0] in HAL_TOKENS


def load_bucket_tags(path: str | Path) -> dict[str, Hal]:
    with Path(path).open(encoding="utf-8") as fh:
        return {r["id"]: Hal(r["tag"]) for r in map(json.loads, filter(str.strip, fh))}


def tag_counts(tags: Mapping[str, Hal]) -> dict[str, int]:
    c = Counter(tags.values())
    return {t.value: c.get(t, 0) for t in Hal}
