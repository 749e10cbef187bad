"""Reference-based text metrics: BLEU-4 and ROUGE-L."""
from __future__ import annotations

import logging
import math
from collections import Counter
from typing import Sequence

logger = logging.getLogger(__name__)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def clipped_counts(candidate: Sequence[str], reference: Sequence[str], n: int) -> tuple[int, int]:
    """(clipped matches, total candidate n-grams) for order ``n``."""
    cand = ngrams(candidate, n)
    ref = ngrams(reference, n)
    return sum(min(c, ref[g]) for g, c in cand.items()), sum(cand.values())


def brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    return 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)


def bleu4(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Sentence BLEU-4: uniform geometric mean of clipped 1..4-gram precisions times BP, no smoothing."""
    if not candidate:
        logger.warning("empty candidate scored as BLEU 0")
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        match, total = clipped_counts(candidate, reference, n)
        if match == 0 or total == 0:
            return 0.0
        log_sum += math.log(match / total)
    return brevity_penalty(len(candidate), len(reference)) * math.exp(log_sum / 4)


def corpus_bleu4(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> float:
    """Corpus BLEU-4 with pooled clipped counts and a corpus-level brevity penalty."""
    if len(candidates) != len(references):
        raise ValueError("candidate and reference lists differ in length")
    matches = [0] * 4
    totals = [0] * 4
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, 5):
            m, t = clipped_counts(cand, ref, n)
            matches[n - 1] += m
            totals[n - 1] += t
    if c_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / 4
    return brevity_penalty(c_len, r_len) * math.exp(log_p)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """ROUGE-L F1 (beta = 1) from the longest common subsequence."""
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)
