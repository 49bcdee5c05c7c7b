"""Named-entity precision / recall / F1, overall and per type."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Literal

from newscap.metrics.corpus import EvalCorpus
from newscap.ner import NER

REPORT_TYPES = ("ALL", "PERSON", "GPE", "ORG")
_LEADING_ARTICLE = re.compile(r"^the\s+")


class EntityScoringError(RuntimeError):
    def __init__(self, item_id: str, cause: Exception):
        super().__init__(f"entity recognition failed on item {item_id}: {cause}")
        self.item_id = item_id


def normalize_entity(surface: str) -> str:
    text = " ".join(surface.casefold().split())
    return _LEADING_ARTICLE.sub("", text)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, matched: int, predicted: int, gold: int) -> PRF:
        p = matched / predicted if predicted else 0.0
        r = matched / gold if gold else 0.0
        return cls(p, r, _f1(p, r))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.precision, self.recall, self.f1)


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def entity_multisets(ner: NER, item) -> tuple[Counter, Counter]:
    """Candidate bag and reference bag (multiset max over references) of (surface, type)."""
    try:
        pred = Counter((normalize_entity(m.surface), m.type) for m in ner(item.candidate))
        gold: Counter = Counter()
        for ref in item.references:
            gold |= Counter((normalize_entity(m.surface), m.type) for m in ner(ref))
    except Exception as exc:
        raise EntityScoringError(item.item_id, exc) from exc
    return pred, gold


def entity_prf(
    corpus: EvalCorpus,
    ner: NER,
    average: Literal["micro", "macro"] = "micro",
) -> dict[str, PRF]:
    """Scores for ALL entities and for PERSON, GPE and ORG.

    Micro averaging pools matched/predicted/gold counts over the corpus. Macro
    averaging takes the mean of per-item precision and recall (items with no
    entities of the type on either side are skipped) and derives F1 from them.
    """
    if average not in ("micro", "macro"):
        raise ValueError("average must be 'micro' or 'macro'")
    counts = {t: [0, 0, 0] for t in REPORT_TYPES}
    per_item: dict[str, list[tuple[float, float]]] = {t: [] for t in REPORT_TYPES}
    for item in corpus:
        pred, gold = entity_multisets(ner, item)
        for t in REPORT_TYPES:
            p_t = pred if t == "ALL" else Counter({k: v for k, v in pred.items() if k[1] == t})
            g_t = gold if t == "ALL" else Counter({k: v for k, v in gold.items() if k[1] == t})
            m = sum((p_t & g_t).values())
            np_, ng = sum(p_t.values()), sum(g_t.values())
            c = counts[t]
            c[0] += m
            c[1] += np_
            c[2] += ng
            if np_ or ng:
                per_item[t].append((m / np_ if np_ else 0.0, m / ng if ng else 0.0))
    if average == "micro":
        return {t: PRF.from_counts(*counts[t]) for t in REPORT_TYPES}
    out = {}
    for t in REPORT_TYPES:
        rows = per_item[t]
        p = sum(x for x, _ in rows) / len(rows) if rows else 0.0
        r = sum(y for _, y in rows) / len(rows) if rows else 0.0
        out[t] = PRF(p, r, _f1(p, r))
    return out
