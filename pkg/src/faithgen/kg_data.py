"""Knowledge-graph data model, JSONL ingestion, linearization and tokenization."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

HEAD_MARK, REL_MARK, TAIL_MARK = "<H>", "<R>", "<T>"
MARKERS = (HEAD_MARK, REL_MARK, TAIL_MARK)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
HAL_TOKENS = ("<hal_low>", "<hal_medium>", "<hal_high>")
RESERVED = (PAD, BOS, EOS, UNK, HEAD_MARK, REL_MARK, TAIL_MARK) + HAL_TOKENS

SPLITS = ("train", "valid", "test")
DEFAULT_MAX_SOURCE_TOKENS = 600

_WORD_RE = re.compile(r"\w+|[^\w\s]")
_SPECIAL_RE = re.compile("(" + "|".join(re.escape(t) for t in RESERVED) + ")")


class DatasetError(ValueError):
    """Schema or content problem in a dataset file."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at char {offset})")


Triple = tuple[str, str, str]


def _check_field(value: str, what: str) -> None:
    if not isinstance(value, str) or not value or value != value.strip():
        raise ValueError(f"{what} must be a non-empty string without surrounding whitespace: {value!r}")
    if any(m in value for m in MARKERS):
        raise ValueError(f"{what} contains a reserved marker: {value!r}")


@dataclass(frozen=True)
class KGGraph:
    """Ordered entities plus ordered (head, relation, tail) triples."""

    entities: tuple[str, ...]
    triples: tuple[Triple, ...]

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "triples", tuple(tuple(t) for t in self.triples))
        known = set(self.entities)
        seen = set()
        for t in self.triples:
            if len(t) != 3:
                raise ValueError(f"triple must have 3 fields: {t!r}")
            h, r, tl = t
            _check_field(h, "head")
            _check_field(r, "relation")
            _check_field(tl, "tail")
            if h not in known or tl not in known:
                raise ValueError(f"triple {t!r} references an entity not in the entity list")
            if t in seen:
                raise ValueError(f"duplicate triple {t!r}")
            seen.add(t)

    @classmethod
    def from_triples(cls, triples: Iterable[Sequence[str]]) -> "KGGraph":
        triples = [tuple(t) for t in triples]
        entities: dict[str, None] = {}
        for h, _, t in triples:
            entities.setdefault(h)
            entities.setdefault(t)
        return cls(tuple(entities), tuple(triples))

    @property
    def relations(self) -> list[str]:
        return [r for _, r, _ in self.triples]

    def __len__(self) -> int:
        return len(self.triples)


@dataclass(frozen=True)
class TextSample:
    id: str
    graph: KGGraph
    reference: str | None
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.split != "test" and not self.reference:
            raise ValueError(f"sample {self.id!r}: reference required for split {self.split!r}")


@dataclass(frozen=True)
class LinearizedGraph:
    text: str
    token_count: int


def load_dataset(path: str | Path, split: str) -> list[TextSample]:
    """Read one TextSample per JSONL line, in file order.

    Blank lines are skipped; anything else that fails to parse or lacks the
    required fields raises :class:`DatasetError` naming the line.
    """
    path = Path(path)
    samples: list[TextSample] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", str(path), lineno) from None
            if not isinstance(obj, dict):
                raise DatasetError("line is not a JSON object", str(path), lineno)
            if "id" not in obj or "triples" not in obj:
                missing = [k for k in ("id", "triples") if k not in obj]
                raise DatasetError(f"missing field(s) {missing}", str(path), lineno)
            text = obj.get("text")
            if text is None and split != "test":
                raise DatasetError("missing field 'text'", str(path), lineno)
            sid = str(obj["id"])
            if sid in seen:
                raise DatasetError(f"duplicate id {sid!r}", str(path), lineno)
            seen.add(sid)
            try:
                graph = KGGraph.from_triples(obj["triples"])
                samples.append(TextSample(sid, graph, text, split))
            except (TypeError, ValueError) as exc:
                raise DatasetError(str(exc), str(path), lineno) from None
    return samples


def write_dataset(samples: Iterable[TextSample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            obj = {"id": s.id, "triples": [list(t) for t in s.graph.triples]}
            if s.reference is not None:
                obj["text"] = s.reference
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def relation_inventory(samples: Iterable[TextSample]) -> list[str]:
    return sorted({r for s in samples for r in s.graph.relations})


# -- linearization ---------------------------------------------------------

def _render(triple: Triple) -> str:
    h, r, t = triple
    return f"{HEAD_MARK} {h} {REL_MARK} {r} {TAIL_MARK} {t}"


def linearize(graph: KGGraph, max_tokens: int = DEFAULT_MAX_SOURCE_TOKENS) -> LinearizedGraph:
    """Render triples as ``<H> head <R> relation <T> tail`` joined by spaces.

    Graphs over ``max_tokens`` are cut at the last whole triple that fits.
    """
    if not graph.triples:
        raise ValueError("cannot linearize a graph with no triples")
    parts: list[str] = []
    count = 0
    for i, triple in enumerate(graph.triples):
        rendered = _render(triple)
        n = len(split_tokens(rendered, specials=True))
        if count + n > max_tokens:
            if not parts:
                raise ValueError(f"first triple alone needs {n} tokens, budget is {max_tokens}")
            logger.warning("linearization truncated to %d of %d triples (%d token budget)",
                           i, len(graph.triples), max_tokens)
            break
        parts.append(rendered)
        count += n
    return LinearizedGraph(" ".join(parts), count)


def parse_linearized(text: str) -> KGGraph:
    """Inverse of :func:`linearize`."""
    if not text:
        raise ParseError("empty linearization", 0)
    pos = 0
    triples: list[Triple] = []
    sep_h = f" {HEAD_MARK} "
    while True:
        if not text.startswith(HEAD_MARK + " ", pos):
            raise ParseError(f"expected '{HEAD_MARK} '", pos)
        start = pos + len(HEAD_MARK) + 1
        r_at = text.find(f" {REL_MARK} ", start)
        if r_at < 0:
            raise ParseError(f"dangling {HEAD_MARK}: no {REL_MARK} follows", pos)
        t_at = text.find(f" {TAIL_MARK} ", r_at + 1)
        if t_at < 0:
            raise ParseError(f"dangling {REL_MARK}: no {TAIL_MARK} follows", r_at + 1)
        next_h = text.find(sep_h, t_at + 1)
        end = len(text) if next_h < 0 else next_h
        head = text[start:r_at]
        rel = text[r_at + len(REL_MARK) + 2:t_at]
        tail = text[t_at + len(TAIL_MARK) + 2:end]
        for value, offset, name in ((head, start, "head"), (rel, r_at + 1, "relation"),
                                    (tail, t_at + 1, "tail")):
            if not value.strip():
                raise ParseError(f"empty {name}", offset)
            if any(m in value for m in MARKERS):
                raise ParseError(f"misplaced marker inside {name}", offset)
        triples.append((head, rel, tail))
        if next_h < 0:
            break
        pos = next_h + 1
    try:
        return KGGraph.from_triples(triples)
    except ValueError as exc:
        raise ParseError(str(exc), 0) from None


# -- tokenization ----------------------------------------------------------

def split_tokens(text: str, specials: bool = False) -> list[str]:
    """Lowercase, split on whitespace, and separate punctuation.

    With ``specials=True`` reserved tokens such as ``<H>`` or ``<hal_low>``
    are kept whole (source side). Corpus text is tokenized with
    ``specials=False`` so it can never produce a reserved token.
    """
    if not specials:
        return _WORD_RE.findall(text.lower())
    out: list[str] = []
    for piece in _SPECIAL_RE.split(text):
        if piece in RESERVED:
            out.append(piece)
        elif piece:
            out.extend(_WORD_RE.findall(piece.lower()))
    return out


def normalize(text: str) -> str:
    return " ".join(split_tokens(text))


class Vocabulary:
    """Token/id bijection with the reserved tokens at fixed low ids."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, texts: Iterable[str], specials: bool = False, min_freq: int = 1) -> "Vocabulary":
        counts: dict[str, int] = {}
        for text in texts:
            for tok in split_tokens(text, specials=specials):
                counts[tok] = counts.get(tok, 0) + 1
        # sorted so the id assignment does not depend on corpus order
        return cls(sorted(t for t, c in counts.items() if c >= min_freq))

    @classmethod
    def from_samples(cls, samples: Iterable[TextSample], max_tokens: int = DEFAULT_MAX_SOURCE_TOKENS) -> "Vocabulary":
        texts: list[str] = []
        for s in samples:
            texts.append(linearize(s.graph, max_tokens).text)
            if s.reference:
                texts.append(s.reference)
        return cls.build(texts, specials=True)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, self.stoi[UNK])

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def bos_id(self) -> int:
        return self.stoi[BOS]

    @property
    def eos_id(self) -> int:
        return self.stoi[EOS]

    @property
    def unk_id(self) -> int:
        return self.stoi[UNK]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self[t] for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_dict(self) -> dict[str, int]:
        return dict(self.stoi)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.stoi, ensure_ascii=False, indent=0), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def from_dict(cls, mapping: dict[str, int]) -> "Vocabulary":
        ordered = sorted(mapping.items(), key=lambda kv: kv[1])
        if [i for _, i in ordered] != list(range(len(ordered))):
            raise ValueError("vocabulary ids must be a contiguous range starting at 0")
        for i, tok in enumerate(RESERVED):
            if ordered[i][0] != tok:
                raise ValueError(f"reserved token {tok!r} must have id {i}")
        vocab = cls()
        for tok, _ in ordered[len(RESERVED):]:
            vocab.add(tok)
        return vocab


def tokenize(text: str, vocab: Vocabulary, specials: bool = False) -> list[int]:
    return vocab.encode(split_tokens(text, specials=specials))


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    skip = {vocab.pad_id, vocab.bos_id, vocab.eos_id}
    return " ".join(vocab.itos[i] for i in ids if i not in skip)
