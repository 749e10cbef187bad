"""Fact enumeration through a judge and the precision / recall / hallucination scores built on it."""
from __future__ import annotations

import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

from ..kg_data import LinearizedGraph, TextSample
from .judge import (JudgeClient, PromptTemplate, ResponseParseError, Transcript, TranscriptEntry,
                    load_templates)

logger = logging.getLogger(__name__)

_MARKER_RE = re.compile(r"^\s*(?:\(?\d+[.):]|[-*•+]|\(?[a-zA-Z][.)])\s+")
_NONE_RE = re.compile(r"^\s*(?:none|n/a|no (?:such )?(?:features?|facts?)\b.*|nothing\b.*|\[\])\s*\.?\s*$",
                      re.IGNORECASE)


@dataclass(frozen=True)
class FactSet:
    facts: tuple[str, ...] = ()

    @classmethod
    def of(cls, facts: Iterable[str]) -> "FactSet":
        seen: set[str] = set()
        out = []
        for f in facts:
            f = f.strip()
            key = f.casefold()
            if f and key not in seen:
                seen.add(key)
                out.append(f)
        return cls(tuple(out))

    def union(self, other: "FactSet") -> "FactSet":
        return FactSet.of(self.facts + other.facts)

    def __len__(self) -> int:
        return len(self.facts)

    def __iter__(self):
        return iter(self.facts)


def strip_marker(line: str) -> str:
    return _MARKER_RE.sub("", line, count=1).strip()


def parse_list_response(raw: str) -> FactSet:
    """Parse a numbered or bulleted list.

    A leading line ending in ':' is treated as preamble. "None"-style
    answers give an empty set. Any other unmarked line is an error.
    """
    lines = [ln.rstrip() for ln in raw.strip().splitlines() if ln.strip()]
    if not lines or (len(lines) == 1 and _NONE_RE.match(lines[0])):
        return FactSet()
    if lines[0].rstrip().endswith(":") and not _MARKER_RE.match(lines[0]):
        lines = lines[1:]
        if not lines:
            return FactSet()
    facts = []
    for ln in lines:
        if not _MARKER_RE.match(ln):
            raise ResponseParseError("expected a list item on every line", raw)
        facts.append(strip_marker(ln))
    return FactSet.of(facts)


def is_affirmative(raw: str) -> bool | None:
    """True for a 'yes' answer, False for 'no', None when neither."""
    text = strip_marker(raw.strip().splitlines()[0]) if raw.strip() else ""
    low = text.lower().lstrip("\"'* ")
    if low.startswith("yes"):
        return True
    if low.startswith("no"):
        return False
    return None


class FactEvaluator:
    """Runs the judge prompts for one sample and records them in a transcript."""

    def __init__(self, judge: JudgeClient, templates: Mapping[str, PromptTemplate] | None = None,
                 transcript: Transcript | None = None, max_in_flight: int = 4):
        self.judge = judge
        self.templates = dict(templates or load_templates())
        self.transcript = transcript if transcript is not None else Transcript()
        self.max_in_flight = max(1, max_in_flight)

    def _query(self, sample_id: str, template_id: str, fact: str | None = None, **fields) -> TranscriptEntry:
        tpl = self.templates[template_id]
        if fact is not None:
            fields["fact"] = fact
        prompt = tpl.render(**fields)
        return TranscriptEntry(sample_id, template_id, tpl.version, prompt, self.judge.complete(prompt), fact)

    def _ask(self, sample_id: str, template_id: str, **fields) -> str:
        entry = self._query(sample_id, template_id, **fields)
        self.transcript.add(entry)
        return entry.response

    def enumerate_input_facts(self, linearized: LinearizedGraph | str, sample_id: str = "") -> FactSet:
        text = getattr(linearized, "text", linearized)
        return parse_list_response(self._ask(sample_id, "input_facts", input=text))

    def count_common_facts(self, input_facts: FactSet, output_text: str, linearized: LinearizedGraph | str = "",
                           sample_id: str = "") -> int:
        """One yes/no query per input fact; unclear answers count as 'no'."""
        if not len(input_facts):
            raise ValueError("no input facts to check")
        text = getattr(linearized, "text", linearized)

        def one(fact: str) -> TranscriptEntry:
            return self._query(sample_id, "common_fact", fact=fact, input=text, output=output_text)

        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            entries = list(pool.map(one, input_facts.facts))
        count = 0
        # recorded in fact order so transcripts do not depend on thread scheduling
        for entry in entries:
            self.transcript.add(entry)
            verdict = is_affirmative(entry.response)
            if verdict is None:
                logger.warning("sample %s: unclear answer for fact %r counted as no: %r",
                               sample_id, entry.fact, entry.response)
            count += bool(verdict)
        return count

    def enumerate_hallucinated_facts(self, linearized: LinearizedGraph | str, output_text: str,
                                     sample_id: str = "") -> FactSet:
        text = getattr(linearized, "text", linearized)
        extrinsic = parse_list_response(self._ask(sample_id, "extrinsic", input=text, output=output_text))
        intrinsic = parse_list_response(self._ask(sample_id, "intrinsic", input=text, output=output_text))
        return extrinsic.union(intrinsic)

    def rate_fluency(self, output_text: str, sample_id: str = "") -> float | None:
        raw = self._ask(sample_id, "fluency", output=output_text)
        m = re.search(r"[1-5](?:\.\d+)?", raw)
        return float(m.group()) if m else None

    def evaluate(self, sample_id: str, linearized: LinearizedGraph | str, output_text: str,
                 fluency: bool = True) -> "FactEvalResult":
        facts = self.enumerate_input_facts(linearized, sample_id)
        common = self.count_common_facts(facts, output_text, linearized, sample_id)
        halluc = self.enumerate_hallucinated_facts(linearized, output_text, sample_id)
        if fluency:
            self.rate_fluency(output_text, sample_id)
        return compute_prh(len(facts), common, len(halluc))


@dataclass(frozen=True)
class FactEvalResult:
    n_input: int
    n_common: int
    n_hallucinated: int
    n_output: int
    precision: float
    recall: float
    hallucination_rate: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def compute_prh(n_input: int, n_common: int, n_hallucinated: int) -> FactEvalResult:
    if min(n_input, n_common, n_hallucinated) < 0:
        raise ValueError("fact counts must be non-negative")
    if n_input == 0:
        raise ValueError("recall is undefined without input facts")
    n_output = n_common + n_hallucinated
    if n_output == 0:
        return FactEvalResult(n_input, 0, 0, 0, 0.0, 0.0, 0.0, degenerate=True)
    return FactEvalResult(n_input, n_common, n_hallucinated, n_output,
                          n_common / n_output, n_common / n_input, n_hallucinated / n_output)


def result_from_transcript(entries: Sequence[TranscriptEntry]) -> FactEvalResult:
    """Recompute a sample's counts by re-parsing its stored responses."""
    by_tpl: dict[str, list[TranscriptEntry]] = {}
    for e in entries:
        by_tpl.setdefault(e.template_id, []).append(e)
    facts = parse_list_response(by_tpl["input_facts"][-1].response)
    answers = {e.fact: e.response for e in by_tpl.get("common_fact", [])}
    common = sum(bool(is_affirmative(answers[f])) for f in facts.facts if f in answers)
    halluc = FactSet()
    for tid in ("extrinsic", "intrinsic"):
        if tid in by_tpl:
            halluc = halluc.union(parse_list_response(by_tpl[tid][-1].response))
    return compute_prh(len(facts), common, len(halluc))


def common_fact_verdicts(entries: Sequence[TranscriptEntry]) -> dict[str, bool]:
    return {e.fact: bool(is_affirmative(e.response)) for e in entries if e.template_id == "common_fact"}


# -- salient facts -----------------------------------------------------------

def rank_salient_features(train: Iterable[TextSample], k: int = 10) -> list[str]:
    """Relation labels by triple frequency (descending), ties by label; top ``k``."""
    counts = Counter(r for s in train for r in s.graph.relations)
    ranked = sorted(counts, key=lambda r: (-counts[r], r))
    if len(ranked) < k:
        logger.warning("only %d distinct relation labels; returning all of them", len(ranked))
    return ranked[:k]


def _norm(s: str) -> str:
    return re.sub(r"[\s_\-]+", " ", s.lower()).strip()


def fact_type(fact: str, labels: Iterable[str]) -> str | None:
    """Relation label mentioned in a fact string (longest match wins)."""
    f = f" {_norm(fact)} "
    best = None
    for label in labels:
        key = _norm(label)
        if key and re.search(rf"(?<![a-z0-9]){re.escape(key)}(?![a-z0-9])", f):
            if best is None or len(key) > len(_norm(best)):
                best = label
    return best


@dataclass(frozen=True)
class SalientEvalResult:
    precision: float
    recall: float
    n_salient_input: int
    n_salient_common: int
    n_output: int
    salient_features: tuple[str, ...]
    degenerate_recall: bool = False
    degenerate_precision: bool = False


def compute_salient(input_facts: FactSet, common: Mapping[str, bool], salient_list: Sequence[str],
                    n_output: int, labels: Iterable[str] | None = None) -> SalientEvalResult:
    """Salient precision = salient common / output facts; salient recall = salient common / salient input.

    ``common`` maps each input fact to the judge's inclusion verdict. Fact
    types are resolved against ``labels`` (default: the salient list itself).
    """
    labels = list(labels) if labels is not None else list(salient_list)
    salient = set(salient_list)
    salient_facts = [f for f in input_facts.facts if fact_type(f, labels) in salient]
    n_in = len(salient_facts)
    n_common = sum(bool(common.get(f)) for f in salient_facts)
    precision = n_common / n_output if n_output else 0.0
    recall = n_common / n_in if n_in else 0.0
    return SalientEvalResult(precision, recall, n_in, n_common, n_output, tuple(salient_list),
                             degenerate_recall=n_in == 0, degenerate_precision=n_output == 0)
