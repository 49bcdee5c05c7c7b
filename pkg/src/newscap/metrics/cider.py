"""CIDEr-D: TF-IDF n-gram cosine with clipping and a Gaussian length penalty.

Document frequencies come from the corpus references (one document per item).
The length used by the penalty is the bigram count, as in the reference
COCO scorer.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict

from newscap.metrics.bleu import ngrams
from newscap.metrics.corpus import EvalCorpus, _require
from newscap.text import tokenize


def _vector(counts: list[Counter], df: dict[tuple, float], log_n: float):
    vec = [dict() for _ in counts]
    norms = [0.0] * len(counts)
    for n, c in enumerate(counts):
        for gram, tf in c.items():
            w = tf * (log_n - math.log(max(1.0, df.get(gram, 0.0))))
            vec[n][gram] = w
            norms[n] += w * w
    return vec, [math.sqrt(x) for x in norms]


def cider_d_scores(corpus: EvalCorpus, n: int = 4, sigma: float = 6.0) -> list[float]:
    """Per-item CIDEr-D scores (already multiplied by 10)."""
    _require(corpus, 2)
    cands = [tokenize(it.candidate) for it in corpus]
    refs = [[tokenize(r) for r in it.references] for it in corpus]
    df: dict[tuple, float] = defaultdict(float)
    for item_refs in refs:
        for gram in {g for r in item_refs for k in range(1, n + 1) for g in ngrams(r, k)}:
            df[gram] += 1
    log_n = math.log(float(len(corpus)))
    scores = []
    for cand, item_refs in zip(cands, refs):
        vc, nc = _vector([ngrams(cand, k) for k in range(1, n + 1)], df, log_n)
        total = 0.0
        for ref in item_refs:
            vr, nr = _vector([ngrams(ref, k) for k in range(1, n + 1)], df, log_n)
            delta = max(0, len(cand) - 1) - max(0, len(ref) - 1)
            penalty = math.exp(-(delta**2) / (2 * sigma**2))
            sims = []
            for k in range(n):
                dot = sum(min(w, vr[k][g]) * vr[k][g] for g, w in vc[k].items() if g in vr[k])
                sim = dot / (nc[k] * nr[k]) if nc[k] and nr[k] else 0.0
                sims.append(sim * penalty)
            total += sum(sims) / n
        scores.append(10.0 * total / len(item_refs))
    return scores


def cider_d(corpus: EvalCorpus, n: int = 4, sigma: float = 6.0) -> float:
    scores = cider_d_scores(corpus, n, sigma)
    return sum(scores) / len(scores)
