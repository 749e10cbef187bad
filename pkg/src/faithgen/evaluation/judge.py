"""Prompt templates, judge clients and the transcript that records every exchange."""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

logger = logging.getLogger(__name__)

TEMPLATE_VERSION = "v1"
TEMPLATE_FILES = {
    "input_facts": "template1_input_facts.txt",
    "common_fact": "template2_common_fact.txt",
    "extrinsic": "template3_extrinsic.txt",
    "intrinsic": "template3_intrinsic.txt",
    "fluency": "fluency.txt",
}


class JudgeError(RuntimeError):
    """Transport failure that survived the retry policy."""


class ResponseParseError(ValueError):
    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(f"{message}: {raw!r}")


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    text: str
    version: str = TEMPLATE_VERSION

    @property
    def fields(self) -> list[str]:
        return re.findall(r"\{(\w+)\}", self.text)

    def render(self, **values: str) -> str:
        return self.text.format(**values)

    def match(self, prompt: str) -> dict[str, str] | None:
        """Recover the field values from a rendered prompt, or None if it is not ours."""
        pattern = ""
        pos = 0
        for m in re.finditer(r"\{(\w+)\}", self.text):
            pattern += re.escape(self.text[pos:m.start()]) + f"(?P<{m.group(1)}>.*?)"
            pos = m.end()
        pattern += re.escape(self.text[pos:])
        found = re.fullmatch(pattern, prompt, flags=re.DOTALL)
        return found.groupdict() if found else None


def load_templates(version: str = TEMPLATE_VERSION, directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    if directory is not None:
        base = Path(directory)
        read = lambda name: (base / name).read_text(encoding="utf-8")  # noqa: E731
    else:
        base = resources.files("faithgen") / "prompts" / version
        read = lambda name: (base / name).read_text(encoding="utf-8")  # noqa: E731
    return {tid: PromptTemplate(tid, read(fname), version) for tid, fname in TEMPLATE_FILES.items()}


class JudgeClient(Protocol):
    def complete(self, prompt: str) -> str: ...


@dataclass
class TranscriptEntry:
    sample_id: str
    template_id: str
    template_version: str
    prompt: str
    response: str
    fact: str | None = None


@dataclass
class Transcript:
    entries: list[TranscriptEntry] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, entry: TranscriptEntry) -> None:
        with self._lock:
            self.entries.append(entry)

    def for_sample(self, sample_id: str) -> list[TranscriptEntry]:
        return [e for e in self.entries if e.sample_id == sample_id]

    def sample_ids(self) -> list[str]:
        return list(dict.fromkeys(e.sample_id for e in self.entries))

    def write(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e), ensure_ascii=False) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "Transcript":
        with Path(path).open(encoding="utf-8") as fh:
            return cls([TranscriptEntry(**json.loads(line)) for line in fh if line.strip()])


@dataclass
class RetryPolicy:
    max_retries: int = 3
    backoff: float = 1.0
    factor: float = 2.0

    def run(self, call: Callable[[], str], sleep: Callable[[float], None] = time.sleep) -> str:
        delay = self.backoff
        for attempt in range(self.max_retries + 1):
            try:
                return call()
            except JudgeError as exc:
                if attempt == self.max_retries:
                    raise
                logger.warning("judge call failed (%s); retry %d/%d in %.1fs",
                               exc, attempt + 1, self.max_retries, delay)
                sleep(delay)
                delay *= self.factor
        raise AssertionError("unreachable")


class RemoteJudge:
    """Single-turn chat completion over HTTPS (OpenAI-compatible endpoint)."""

    def __init__(self, endpoint: str, model: str, api_key_env: str = "OPENAI_API_KEY",
                 timeout: float = 60.0, max_retries: int = 3, temperature: float = 0.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retry = RetryPolicy(max_retries=max_retries)
        self.temperature = temperature

    def _post(self, prompt: str) -> str:
        import httpx

        key = os.environ[self.api_key_env]
        try:
            resp = httpx.post(self.endpoint, timeout=self.timeout,
                              headers={"Authorization": f"Bearer {key}"},
                              json={"model": self.model, "temperature": self.temperature,
                                    "messages": [{"role": "user", "content": prompt}]})
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise JudgeError(f"{self.endpoint}: {exc}") from exc

    def complete(self, prompt: str) -> str:
        # a missing key is a configuration problem, not worth retrying
        if not os.environ.get(self.api_key_env):
            raise JudgeError(f"environment variable {self.api_key_env} is not set")
        return self.retry.run(lambda: self._post(prompt))


class TemplateJudge:
    """Base for offline judges: identifies which template produced a prompt and dispatches."""

    def __init__(self, templates: Mapping[str, PromptTemplate] | None = None):
        self.templates = dict(templates or load_templates())

    def complete(self, prompt: str) -> str:
        # longest template first: the intrinsic/extrinsic prompts share a prefix
        for tid, tpl in sorted(self.templates.items(), key=lambda kv: -len(kv[1].text)):
            fields = tpl.match(prompt)
            if fields is not None:
                return getattr(self, f"answer_{tid}")(**fields)
        raise JudgeError("prompt does not match any known template")

    def answer_input_facts(self, input: str) -> str:
        raise NotImplementedError

    def answer_common_fact(self, input: str, output: str, fact: str) -> str:
        raise NotImplementedError

    def answer_extrinsic(self, input: str, output: str) -> str:
        raise NotImplementedError

    def answer_intrinsic(self, input: str, output: str) -> str:
        raise NotImplementedError

    def answer_fluency(self, output: str) -> str:
        return "3"


def numbered(items: Iterable[str]) -> str:
    lines = [f"{i}. {item}" for i, item in enumerate(items, start=1)]
    return "\n".join(lines) if lines else "None"


class FixtureJudge(TemplateJudge):
    """Answers from a fixture table keyed by linearized input (and output text).

    ``table[input]`` holds ``input_response``, ``common`` (fact -> raw answer),
    ``extrinsic_response``, ``intrinsic_response`` and optional ``fluency``.
    """

    def __init__(self, table: Mapping[str, Mapping], templates: Mapping[str, PromptTemplate] | None = None):
        super().__init__(templates)
        self.table = table

    def _row(self, input: str) -> Mapping:
        try:
            return self.table[input]
        except KeyError:
            raise JudgeError("fixture has no entry for this input") from None

    def answer_input_facts(self, input):
        return self._row(input)["input_response"]

    def answer_common_fact(self, input, output, fact):
        answers = {k.casefold(): v for k, v in self._row(input)["common"].items()}
        return answers.get(fact.casefold(), "no")

    def answer_extrinsic(self, input, output):
        return self._row(input)["extrinsic_response"]

    def answer_intrinsic(self, input, output):
        return self._row(input)["intrinsic_response"]

    def answer_fluency(self, output):
        for row in self.table.values():
            if row.get("output") == output:
                return str(row.get("fluency", 3))
        return "3"


class EchoJudge(TemplateJudge):
    """Lists each linearized triple as one input fact."""

    def answer_input_facts(self, input):
        from ..kg_data import parse_linearized

        return numbered(f"{h} {r} {t}" for h, r, t in parse_linearized(input).triples)


class LexicalJudge(TemplateJudge):
    """Deterministic offline judge built on token overlap.

    Facts are triples rendered as ``relation: tail``. A fact counts as
    included when all tokens of its tail appear in the output; an output
    sentence is extrinsic when fewer than half its content tokens occur in
    the input; intrinsic contradictions are not detected.
    """

    def __init__(self, templates=None, stopwords: Iterable[str] | None = None):
        super().__init__(templates)
        from ..control import DEFAULT_STOPWORDS

        self.stopwords = frozenset(stopwords) if stopwords is not None else DEFAULT_STOPWORDS

    def answer_input_facts(self, input):
        from ..kg_data import parse_linearized

        return numbered(f"{r}: {t}" for _, r, t in parse_linearized(input).triples)

    def answer_common_fact(self, input, output, fact):
        from ..kg_data import split_tokens

        value = fact.split(":", 1)[-1]
        needed = set(split_tokens(value))
        present = set(split_tokens(output))
        return "yes" if needed and needed <= present else "no"

    def answer_extrinsic(self, input, output):
        from ..kg_data import split_tokens

        graph = set(split_tokens(input, specials=True))
        flagged = []
        for sent in re.split(r"(?<=[.!?])\s+", output.strip()):
            content = [t for t in split_tokens(sent) if t not in self.stopwords and t.isalnum()]
            if content and sum(t in graph for t in content) < len(content) / 2:
                flagged.append(sent)
        return numbered(flagged)

    def answer_intrinsic(self, input, output):
        return "None"

    def answer_fluency(self, output):
        return "5" if output.strip() else "1"
