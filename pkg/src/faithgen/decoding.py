"""Greedy and beam decoding conditioned on a hallucination tag."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .control import Hal
from .kg_data import KGGraph, Vocabulary, detokenize
from .model import Seq2Seq, pad_batch
from .training import encode_source


@dataclass(frozen=True)
class DecodingResult:
    tokens: tuple[int, ...]
    logprobs: tuple[float, ...]
    tag: Hal | None
    finished: bool

    @property
    def score(self) -> float:
        return sum(self.logprobs)

    def text(self, vocab: Vocabulary) -> str:
        return detokenize(self.tokens, vocab)


@torch.no_grad()
def greedy_decode(model: Seq2Seq, sources: Sequence[Sequence[int]], max_len: int | None = None,
                  tag: Hal | None = None) -> list[DecodingResult]:
    model.eval()
    cfg = model.cfg
    max_len = max_len or cfg.max_target_len
    device = next(model.parameters()).device
    src = pad_batch([list(s) for s in sources], cfg.pad_id).to(device)
    mem, mem_pad = model.encode(src)
    n = src.shape[0]
    prefix = torch.full((n, 1), cfg.bos_id, dtype=torch.long, device=device)
    tokens: list[list[int]] = [[] for _ in range(n)]
    logps: list[list[float]] = [[] for _ in range(n)]
    done = [False] * n
    for _ in range(max_len):
        live = [i for i in range(n) if not done[i]]
        if not live:
            break
        idx = torch.tensor(live, device=device)
        lp = model.step_logprobs(prefix[idx], mem[idx], mem_pad[idx])
        best = lp.argmax(dim=-1)
        step_tokens = torch.full((n,), cfg.pad_id, dtype=torch.long, device=device)
        for row, i in enumerate(live):
            tok = int(best[row])
            logps[i].append(float(lp[row, tok]))
            step_tokens[i] = tok
            if tok == cfg.eos_id:
                done[i] = True
            else:
                tokens[i].append(tok)
        prefix = torch.cat([prefix, step_tokens[:, None]], dim=1)
    return [DecodingResult(tuple(t), tuple(l), tag, d) for t, l, d in zip(tokens, logps, done)]


@torch.no_grad()
def beam_decode(model: Seq2Seq, source: Sequence[int], width: int, max_len: int | None = None,
                tag: Hal | None = None) -> DecodingResult:
    """Best completed hypothesis by cumulative log-probability.

    Ties go to the shorter hypothesis, then to the smaller token-id sequence.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    model.eval()
    cfg = model.cfg
    max_len = max_len or cfg.max_target_len
    device = next(model.parameters()).device
    src = torch.tensor([list(source)], dtype=torch.long, device=device)
    mem, mem_pad = model.encode(src)

    def rank(h):
        return (-sum(h[1]), len(h[0]), h[0])

    live: list[tuple[tuple[int, ...], tuple[float, ...]]] = [((), ())]
    finished: list[tuple[tuple[int, ...], tuple[float, ...], bool]] = []
    for _ in range(max_len):
        prefix = torch.tensor([[cfg.bos_id, *toks] for toks, _ in live], dtype=torch.long, device=device)
        lp = model.step_logprobs(prefix, mem.expand(len(live), -1, -1), mem_pad.expand(len(live), -1))
        candidates = []
        for row, (toks, lps) in enumerate(live):
            top = torch.topk(lp[row], min(width, lp.shape[-1]))
            for val, tok in zip(top.values.tolist(), top.indices.tolist()):
                candidates.append(((*toks, tok), (*lps, val)))
        candidates.sort(key=rank)
        live = []
        for toks, lps in candidates[:width]:
            if toks[-1] == cfg.eos_id:
                finished.append((toks[:-1], lps, True))
            else:
                live.append((toks, lps))
        if len(finished) >= width or not live:
            break
    else:
        finished += [(toks, lps, False) for toks, lps in live]
    best = min(finished, key=lambda h: (-sum(h[1]), len(h[0]), h[0]))
    return DecodingResult(best[0], best[1], tag, best[2])


def generate(model: Seq2Seq, vocab: Vocabulary, graph: KGGraph, tag: Hal | None = Hal.LOW,
             decode: str = "greedy", beam_width: int = 4) -> DecodingResult:
    """Decode text for ``graph`` from ``<tag> + linearized graph``.

    ``tag=None`` decodes from the bare linearization (models trained without
    control tokens).
    """
    source = encode_source(graph, vocab, tag, model.cfg.max_source_len)
    if decode == "greedy":
        return greedy_decode(model, [source], tag=tag)[0]
    if decode == "beam":
        return beam_decode(model, source, beam_width, tag=tag)
    raise ValueError(f"unknown decode mode {decode!r}")


def generate_batch(model: Seq2Seq, vocab: Vocabulary, graphs: Sequence[KGGraph], tag: Hal | None = Hal.LOW,
                   batch_size: int = 64) -> list[DecodingResult]:
    sources = [encode_source(g, vocab, tag, model.cfg.max_source_len) for g in graphs]
    out: list[DecodingResult] = []
    for k in range(0, len(sources), batch_size):
        out += greedy_decode(model, sources[k:k + batch_size], tag=tag)
    return out


@torch.no_grad()
def incremental_nll(model: Seq2Seq, source: Sequence[int], target: Sequence[int]) -> float:
    """Sum of per-step negative log-probabilities of ``target`` via step-wise decoding."""
    model.eval()
    device = next(model.parameters()).device
    src = torch.tensor([list(source)], dtype=torch.long, device=device)
    mem, mem_pad = model.encode(src)
    prefix = [model.cfg.bos_id]
    total = 0.0
    for tok in target:
        lp = model.step_logprobs(torch.tensor([prefix], device=device), mem, mem_pad)
        total -= float(lp[0, tok])
        prefix.append(tok)
    return total
