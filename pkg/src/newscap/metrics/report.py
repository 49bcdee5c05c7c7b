from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from newscap.metrics.bleu import bleu4
from newscap.metrics.cider import cider_d
from newscap.metrics.corpus import EvalCorpus
from newscap.metrics.entities import PRF, REPORT_TYPES, entity_prf
from newscap.metrics.rouge import rouge_l
from newscap.ner import NER


@dataclass(frozen=True)
class EvalReport:
    n_items: int
    bleu4: float
    rouge_l: float
    cider: float | None
    entity_scores: dict[str, PRF]

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_items": self.n_items,
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "entity_scores": {
                t: {"precision": s.precision, "recall": s.recall, "f1": s.f1} for t, s in self.entity_scores.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        cider = "n/a" if self.cider is None else f"{self.cider * 100:.2f}"
        lines = [
            f"items      {self.n_items}",
            f"BLEU-4     {self.bleu4 * 100:.2f}",
            f"ROUGE-L    {self.rouge_l * 100:.2f}",
            f"CIDEr-D    {cider}",
            "",
            f"{'entities':<10} {'P':>7} {'R':>7} {'F1':>7}",
        ]
        for t in REPORT_TYPES:
            s = self.entity_scores[t]
            lines.append(f"{t:<10} {s.precision * 100:7.2f} {s.recall * 100:7.2f} {s.f1 * 100:7.2f}")
        return "\n".join(lines)


def evaluate(corpus: EvalCorpus, ner: NER, average: str = "micro") -> EvalReport:
    """All metrics; CIDEr-D is None for single-item corpora."""
    return EvalReport(
        n_items=len(corpus),
        bleu4=bleu4(corpus),
        rouge_l=rouge_l(corpus),
        cider=cider_d(corpus) if len(corpus) >= 2 else None,
        entity_scores=entity_prf(corpus, ner, average),
    )
