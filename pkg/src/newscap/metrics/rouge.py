"""ROUGE-L F-measure, best reference per item, averaged over items."""

from __future__ import annotations

from newscap.metrics.corpus import EvalCorpus, _require
from newscap.text import tokenize

BETA = 1.2


def lcs_length(a: list[str], b: list[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(candidate: list[str], reference: list[str], beta: float = BETA) -> float:
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def rouge_l_item(candidate: str, references, beta: float = BETA) -> float:
    cand = tokenize(candidate)
    return max(rouge_l_pair(cand, tokenize(r), beta) for r in references)


def rouge_l(corpus: EvalCorpus, beta: float = BETA) -> float:
    _require(corpus)
    return sum(rouge_l_item(it.candidate, it.references, beta) for it in corpus) / len(corpus)
