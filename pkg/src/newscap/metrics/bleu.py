"""Corpus-level BLEU-4 (uniform weights, clipped counts, brevity penalty, no smoothing)."""

from __future__ import annotations

import math
from collections import Counter

from newscap.metrics.corpus import EvalCorpus, _require
from newscap.text import tokenize


def ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(cand_len: int, ref_lens: list[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - cand_len), r))


def bleu4(corpus: EvalCorpus, max_n: int = 4) -> float:
    _require(corpus)
    matched = [0] * max_n
    total = [0] * max_n
    cand_len = ref_len = 0
    for item in corpus:
        cand = tokenize(item.candidate)
        refs = [tokenize(r) for r in item.references]
        cand_len += len(cand)
        ref_len += _closest_ref_len(len(cand), [len(r) for r in refs])
        for n in range(1, max_n + 1):
            counts = ngrams(cand, n)
            max_ref: Counter = Counter()
            for r in refs:
                max_ref |= ngrams(r, n)
            matched[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            total[n - 1] += sum(counts.values())
    if min(matched) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return bp * math.exp(log_p)
